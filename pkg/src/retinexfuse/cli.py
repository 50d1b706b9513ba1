"""Command-line entry point: ``retinexfuse {fuse,ablate,metrics}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import multiprocessing
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import losses as ls
from . import metrics as mt
from . import networks as nw
from . import trainer as tr
from .imaging import quantize16, read_image, write_png8, write_png16

log = logging.getLogger("retinexfuse")

GUTTER = 4


@dataclass
class RunConfig:
    ir: str = ""
    vis: str = ""
    out: str = "out"
    scale: int = 2
    iters: int = 10000
    lr: float = 1e-3
    seed: int = 0
    lambda1: float = 1.0
    lambda2: float = 0.2
    lambda3: float = 0.25
    lambda4: float = 0.25
    lambda5: float = 1.0
    variant: str = "full"
    log_every: int = 10
    workers: int = 1
    save_params: bool = False

    def validate(self) -> None:
        for name in ("ir", "vis"):
            path = getattr(self, name)
            if not path or not Path(path).is_file():
                raise ValueError(f"--{name} file not found: {path!r}")
        if self.scale not in tr.SCALES:
            raise ValueError(f"--scale must be one of {tr.SCALES}")
        if self.variant not in tr.VARIANTS:
            raise ValueError(f"--variant must be one of {tr.VARIANTS}")
        if self.workers < 1:
            raise ValueError("--workers must be >= 1")

    def weights(self) -> ls.LossWeights:
        return ls.LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5)

    def train_config(self) -> tr.TrainConfig:
        return tr.TrainConfig(
            learning_rate=self.lr,
            iterations=self.iters,
            log_every=self.log_every,
            weights=self.weights(),
            seed=self.seed,
        )


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then ``--config`` JSON, then explicit flags."""
    values = asdict(RunConfig())
    if getattr(args, "config", None):
        loaded = json.loads(Path(args.config).read_text())
        unknown = set(loaded) - set(values)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    cfg = RunConfig(**values)
    cfg.ir = str(Path(cfg.ir).resolve()) if cfg.ir else cfg.ir
    cfg.vis = str(Path(cfg.vis).resolve()) if cfg.vis else cfg.vis
    return cfg


def fuse_to_dir(cfg: RunConfig, out_dir: Path, variant: str | None = None) -> tr.FusionResult:
    variant = variant or cfg.variant
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ir, vis = read_image(cfg.ir), read_image(cfg.vis)
    scene = tr.prepare_scene(ir, vis, cfg.scale, cfg.seed)
    result = tr.train(scene, cfg.train_config(), variant)

    write_png16(out_dir / "fused.png", result.fused)
    write_png16(out_dir / "lighting1.png", result.lighting1)
    write_png16(out_dir / "lighting2.png", result.lighting2)
    (out_dir / "alpha.json").write_text(
        json.dumps({"alpha1": result.alpha1, "alpha2": result.alpha2}, indent=2)
    )
    ls.write_log_csv(result.log, out_dir / "log.csv")
    report = mt.evaluate_all(ir, vis, quantize16(result.fused),
                             inputs={"ir": cfg.ir, "vis": cfg.vis, "fused": "fused.png"})
    (out_dir / "metrics.json").write_text(report.to_json())
    resolved = asdict(cfg)
    resolved["variant"] = variant
    resolved["out"] = str(out_dir)
    (out_dir / "config.json").write_text(json.dumps(resolved, indent=2))
    if cfg.save_params:
        for name, store in result.params.items():
            nw.save_params(store, out_dir / f"{name}.params")
    log.info("%s: wrote %s (%.1fs)", variant, out_dir, result.elapsed)
    return result


def cmd_fuse(cfg: RunConfig) -> int:
    cfg.validate()
    fuse_to_dir(cfg, Path(cfg.out))
    return 0


def _ablate_one(job):
    cfg, out_dir, variant = job
    r = fuse_to_dir(cfg, out_dir, variant)
    return variant, r.fused, [(x.iteration, x.alpha1, x.alpha2) for x in r.log]


def contact_sheet(images: list[np.ndarray], gutter: int = GUTTER) -> np.ndarray:
    """Place equally sized images side by side on a white background."""
    h, w = images[0].shape
    sheet = np.ones((h, len(images) * w + (len(images) - 1) * gutter))
    for k, img in enumerate(images):
        x0 = k * (w + gutter)
        sheet[:, x0 : x0 + w] = img
    return sheet


def cmd_ablate(cfg: RunConfig) -> int:
    cfg.validate()
    root = Path(cfg.out)
    jobs = [(cfg, root / v, v) for v in tr.VARIANTS]
    if cfg.workers > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=cfg.workers, mp_context=ctx) as pool:
            results = list(pool.map(_ablate_one, jobs))
    else:
        results = [_ablate_one(j) for j in jobs]

    write_png8(root / "contact_sheet.png", contact_sheet([fused for _, fused, _ in results]))
    with open(root / "alpha_trajectories.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "iter", "alpha1", "alpha2"])
        for variant, _, traj in results:
            for it, a1, a2 in traj:
                writer.writerow([variant, it, repr(a1), repr(a2)])
    return 0


def _find_triples(directory: Path) -> list[tuple[str, Path, Path, Path]]:
    found: dict[str, dict[str, Path]] = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() not in (".png", ".pgm"):
            continue
        stem, _, role = p.stem.rpartition("_")
        if stem and role in ("ir", "vis", "fused"):
            found.setdefault(stem, {})[role] = p
    triples = []
    for name, roles in sorted(found.items()):
        if set(roles) != {"ir", "vis", "fused"}:
            raise ValueError(f"incomplete triple {name!r} in {directory}: has {sorted(roles)}")
        triples.append((name, roles["ir"], roles["vis"], roles["fused"]))
    if not triples:
        raise ValueError(f"no <name>_ir/_vis/_fused triples in {directory}")
    return triples


def metrics_for_paths(src1, src2, fused) -> mt.MetricReport:
    return mt.evaluate_all(
        read_image(src1), read_image(src2), read_image(fused),
        inputs={"src1": str(src1), "src2": str(src2), "fused": str(fused)},
    )


def _metrics_job(triple):
    name, a, b, f = triple
    return name, metrics_for_paths(a, b, f)


def cmd_metrics(args: argparse.Namespace) -> int:
    out = Path(args.out) if args.out else None
    if args.batch:
        triples = _find_triples(Path(args.batch))
        workers = args.workers or 1
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(_metrics_job, triples))
        else:
            rows = [_metrics_job(t) for t in triples]
        out = out or Path(args.batch)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "mg", "cen", "ei", "sf"])
            for name, r in rows:
                writer.writerow([name, repr(r.mg), repr(r.cen), repr(r.ei), repr(r.sf)])
        for name, r in rows:
            print(f"{name}: MG={r.mg:.4f} CEN={r.cen:.4f} EI={r.ei:.4f} SF={r.sf:.4f}")
        return 0

    if not (args.src1 and args.src2 and args.fused):
        raise ValueError("metrics needs SRC1 SRC2 FUSED or --batch DIR")
    report = metrics_for_paths(args.src1, args.src2, args.fused)
    text = report.to_json()
    print(text)
    out = out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(text)
    return 0


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with a resolved run configuration")
    p.add_argument("--ir", help="infrared image (PNG/PGM)")
    p.add_argument("--vis", help="visible image (PNG/PGM)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--scale", type=int, choices=tr.SCALES)
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    for k in range(1, 6):
        p.add_argument(f"--lambda{k}", type=float)
    p.add_argument("--variant", choices=tr.VARIANTS)
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--save-params", dest="save_params", action="store_const", const=True,
                   help="also write network parameter checkpoints")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retinexfuse", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(sub.add_parser("fuse", help="fuse one IR/VIS pair"))
    _add_run_flags(sub.add_parser("ablate", help="run all loss ablation variants"))

    pm = sub.add_parser("metrics", help="MG/CEN/EI/SF of a fused image")
    pm.add_argument("src1", nargs="?")
    pm.add_argument("src2", nargs="?")
    pm.add_argument("fused", nargs="?")
    pm.add_argument("--batch", help="directory of <name>_ir/_vis/_fused triples")
    pm.add_argument("--out", help="output directory for metrics.json / metrics.csv")
    pm.add_argument("--workers", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "metrics":
            return cmd_metrics(args)
        cfg = resolve_config(args)
        return cmd_fuse(cfg) if args.command == "fuse" else cmd_ablate(cfg)
    except tr.NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
