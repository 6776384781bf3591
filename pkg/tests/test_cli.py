import csv
import io

import pytest
from shapes import plane

from pointcodec import read_ply, write_ply
from pointcodec.cli import main


@pytest.fixture
def ply(tmp_path):
    p = tmp_path / "in.ply"
    p.write_bytes(write_ply(plane(16)))
    return p


def test_encode_decode_lossless(ply, tmp_path, capsys):
    out, back = tmp_path / "x.pcc", tmp_path / "back.ply"
    assert main(["encode", str(ply), str(out), "--attribute", "predict", "--LODC", "4"]) == 0
    assert "bpp_total=" in capsys.readouterr().out
    assert main(["decode", str(out), str(back)]) == 0
    assert read_ply(back.read_bytes()).sorted() == read_ply(ply.read_bytes()).sorted()


def test_eval_csv(ply, tmp_path, capsys):
    out, back = tmp_path / "x.pcc", tmp_path / "back.ply"
    main(["encode", str(ply), str(out), "--RQS", "8"])
    main(["decode", str(out), str(back), "--ascii"])
    capsys.readouterr()
    assert main(["eval", str(ply), str(back), "--bitstream", str(out), "--coder", "raht"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert rows[0]["psnr_g"] == "999.0"
    assert float(rows[0]["psnr_y"]) < 999
    assert float(rows[0]["bpp_total"]) > 0


def test_exit_codes(ply, tmp_path):
    assert main(["encode", str(tmp_path / "missing.ply"), str(tmp_path / "o")]) == 2
    assert main(["encode", str(ply), str(tmp_path / "o"), "--geometry", "trisoup", "--DBODL", "0"]) == 2
    bad = tmp_path / "bad.pcc"
    bad.write_bytes(b"not a container")
    assert main(["decode", str(bad), str(tmp_path / "o.ply")]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["encode"])
    assert exc.value.code == 2


def test_sweep_command(ply, tmp_path, capsys):
    outdir = tmp_path / "res"
    code = main(["sweep", str(ply), "--case", "2", "--coders", "raht", "lifting",
                 "--qsteps", "2", "4", "8", "16", "--out", str(outdir)])
    assert code == 0
    rd = list(csv.DictReader((outdir / "rd.csv").open()))
    assert len(rd) == 8
    bd = list(csv.DictReader((outdir / "bd.csv").open()))
    assert [r["coder"] for r in bd] == ["lifting"]
    assert main(["sweep", "--case", "2", "--qsteps", "0"]) == 2
