"""Rate-distortion sweeps over the three coding cases."""

from __future__ import annotations

import csv
import io
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import PointCloudCodec
from .metrics import RdPoint, bd_stats, evaluate
from .ply import read_ply

CSV_COLUMNS = ("dataset", "case", "coder", "pqs", "dbodl", "qstep", "bpp_geom", "bpp_color",
               "bpp_total", "psnr_g", "psnr_y", "psnr_u", "psnr_v", "enc_s", "dec_s")
BD_COLUMNS = ("dataset", "benchmark", "coder", "metric", "bd_psnr", "bd_rate")
CODER_CHOICES = ("raht", "predict", "lifting", "vpcc")


@dataclass
class ExperimentConfig:
    """One sweep.

    Case 1 is lossless throughout, case 2 keeps geometry lossless and sweeps
    the color ``qsteps``, case 3 sweeps geometry (``pqs`` or ``dbodl``) and
    color together. Ladders of length 1 are broadcast.
    """

    case: int = 1
    coders: tuple = ("raht",)
    geometry: str = "octree"
    pqs: tuple = (1.0,)
    dbodl: tuple = (2,)
    qsteps: tuple = (0.0,)
    inputs: tuple = ()
    output_dir: str | None = None
    benchmark: str = "raht"
    bd_metric: str = "psnr_y"
    lodc: int = 8
    k: int = 3
    jobs: int = 1

    def __post_init__(self):
        if self.case not in (1, 2, 3):
            raise ValueError("case must be 1, 2 or 3")
        bad = [c for c in self.coders if c not in CODER_CHOICES]
        if bad:
            raise ValueError(f"unknown coders {bad}; choose from {CODER_CHOICES}")
        if self.geometry not in ("octree", "trisoup"):
            raise ValueError("sweep geometry must be 'octree' or 'trisoup'")
        if self.bd_metric not in ("psnr_g", "psnr_y", "psnr_u", "psnr_v"):
            raise ValueError(f"unknown BD metric {self.bd_metric!r}")
        if self.case == 1:
            self.pqs, self.qsteps = (1.0,), (0.0,)
            if self.geometry == "trisoup":
                raise ValueError("case 1 needs lossless (octree) geometry")
        elif self.case == 2:
            self.pqs = (1.0,)
            if self.geometry == "trisoup":
                raise ValueError("case 2 needs lossless (octree) geometry")
            if any(q <= 0 for q in self.qsteps):
                raise ValueError("case 2 needs lossy color qsteps (> 0)")
        self.coders = tuple(self.coders)
        self.pqs = tuple(float(v) for v in self.pqs)
        self.dbodl = tuple(int(v) for v in self.dbodl)
        self.qsteps = tuple(float(v) for v in self.qsteps)

    def ladder(self) -> list:
        """``(pqs, dbodl, qstep)`` triples in sweep order."""
        geo = self.dbodl if self.geometry == "trisoup" else self.pqs
        n = max(len(geo), len(self.qsteps))
        for name, lst in (("geometry", geo), ("qsteps", self.qsteps)):
            if len(lst) not in (1, n):
                raise ValueError(f"{name} ladder has length {len(lst)}, expected 1 or {n}")

        def at(lst, i):
            return lst[0] if len(lst) == 1 else lst[i]

        if self.geometry == "trisoup":
            return [(1.0, at(self.dbodl, i), at(self.qsteps, i)) for i in range(n)]
        return [(at(self.pqs, i), self.dbodl[0], at(self.qsteps, i)) for i in range(n)]


def codec_for(coder: str, geometry: str, pqs: float, dbodl: int, qstep: float,
              lodc: int = 8, k: int = 3) -> PointCloudCodec:
    if coder == "vpcc":
        return PointCloudCodec(geometry="vpcc", pqs=pqs, qstep=qstep)
    return PointCloudCodec(geometry=geometry, attribute=coder, pqs=pqs, dbodl=dbodl,
                           qstep=qstep, lodc=lodc, k=k)


def run_point(cloud, dataset: str, case: int, coder: str, geometry: str, pqs: float,
              dbodl: int, qstep: float, lodc: int = 8, k: int = 3) -> dict:
    """Encode, decode and evaluate one ladder point; returns a CSV row."""
    codec = codec_for(coder, geometry, pqs, dbodl, qstep, lodc, k)
    data, report = codec.encode(cloud)
    t0 = time.perf_counter()
    rec = PointCloudCodec.decode(data)
    dec_s = time.perf_counter() - t0
    ev = evaluate(cloud, rec)
    return {
        "dataset": dataset, "case": case, "coder": coder, "pqs": pqs, "dbodl": dbodl,
        "qstep": qstep, "bpp_geom": report.bpp_geom, "bpp_color": report.bpp_color,
        "bpp_total": report.bpp_total, "psnr_g": ev.psnr_g,
        "psnr_y": ev.psnr_c.get("Y", float("nan")), "psnr_u": ev.psnr_c.get("U", float("nan")),
        "psnr_v": ev.psnr_c.get("V", float("nan")), "enc_s": report.seconds, "dec_s": dec_s,
    }


def _job(args):
    path, cloud, kwargs = args
    if cloud is None:
        cloud = read_ply(Path(path).read_bytes())
    return run_point(cloud, **kwargs)


def sweep(config: ExperimentConfig, clouds=None) -> list:
    """Rows in config order (dataset, coder, ladder); ``clouds`` maps name to cloud."""
    jobs = []
    sources = list(clouds.items()) if clouds is not None else [(Path(p).stem, p) for p in config.inputs]
    for name, src in sources:
        for coder in config.coders:
            for pqs, dbodl, qstep in config.ladder():
                kwargs = dict(dataset=name, case=config.case, coder=coder, geometry=config.geometry,
                              pqs=pqs, dbodl=dbodl, qstep=qstep, lodc=config.lodc, k=config.k)
                cloud = src if clouds is not None else None
                jobs.append((None if clouds is not None else src, cloud, kwargs))
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs) as pool:
            rows = list(pool.map(_job, jobs))
    else:
        rows = [_job(j) for j in jobs]
    for name, _ in sources:
        for coder in config.coders:
            rates = [r["bpp_total"] for r in rows if r["dataset"] == name and r["coder"] == coder]
            if len(rates) > 1 and not (np.all(np.diff(rates) < 0) or np.all(np.diff(rates) > 0)):
                warnings.warn(f"non-monotone rates for {name}/{coder}: {rates}")
    return rows


def bd_table(rows, benchmark: str = "raht", metric: str = "psnr_y", method: str = "cubic") -> list:
    """BD-PSNR / BD-rate of every other coder against ``benchmark``, per dataset."""
    out = []
    datasets = list(dict.fromkeys(r["dataset"] for r in rows))
    for ds in datasets:
        curves = {}
        for r in rows:
            if r["dataset"] == ds:
                curves.setdefault(r["coder"], []).append(RdPoint(r["bpp_total"], r[metric]))
        if benchmark not in curves:
            continue
        for coder, curve in curves.items():
            if coder == benchmark:
                continue
            try:
                bd_psnr, bd_rate = bd_stats(curves[benchmark], curve, method)
            except ValueError as exc:
                warnings.warn(f"BD skipped for {ds}/{coder}: {exc}")
                continue
            out.append({"dataset": ds, "benchmark": benchmark, "coder": coder, "metric": metric,
                        "bd_psnr": bd_psnr, "bd_rate": bd_rate})
    return out


def rows_to_csv(rows, columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def write_results(rows, bd_rows, output_dir) -> tuple:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rd, bd = out / "rd.csv", out / "bd.csv"
    rd.write_text(rows_to_csv(rows))
    bd.write_text(rows_to_csv(bd_rows, BD_COLUMNS))
    return rd, bd
