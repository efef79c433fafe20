"""Command-line entry points.

Subcommands: synth, viewgen, match-stats, pretrain, bench, gradcheck, ffi.
Every command honors --seed; equal arguments and seed give byte-identical
outputs regardless of --workers. Exit codes: 0 ok, 1 usage, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import ffi, gradcheck, io, kernels
from .cloud import synth_scene
from .config import Config, dump_config, load_config
from .errors import DataError, MscError, NumericalError, UsageError
from .rng import DOMAIN_INIT, DOMAIN_SCENE, DOMAIN_STEP, Rng
from .surfel import ensure_normals
from .toytrain import EncoderParams, Metrics, OptState, train_step
from .viewgen import generate_pair

log = logging.getLogger("msc")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_cfg(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    return cfg.validate()


def _workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    return max(1, os.cpu_count() or 1)


def _scene_paths(root: Path) -> list[Path]:
    if root.is_file():
        return [root]
    return sorted(p for p in root.glob("*.mscb")) + sorted(root.glob("*.ply"))


# ------------------------------------------------------------------ synth

def _synth_worker(task):
    seed, index, cfg, out_dir = task
    scene = synth_scene(cfg.scene_spec(), Rng.for_stream(seed, DOMAIN_SCENE, index))
    path = Path(out_dir) / f"scene_{index:04d}.mscb"
    io.save_cloud(scene, path, "mscb")
    return str(path)


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg.seed, i, cfg, str(out)) for i in range(args.count)]
    nw = _workers(args)
    if nw > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            list(pool.map(_synth_worker, tasks))
    else:
        for t in tasks:
            _synth_worker(t)
    log.info("wrote %d scenes to %s", args.count, out)
    return 0


# ---------------------------------------------------------------- viewgen

def _viewgen_worker(task):
    seed, index, in_path, out_dir, cfg, fmt, previews = task
    source = io.load_cloud(in_path)
    pair, masks, corr = ffi.scene_pipeline(source, cfg, seed, index)
    stem = Path(in_path).stem
    out = Path(out_dir)
    ext = "mscb" if fmt == "mscb" else "ply"
    wfmt = "mscb" if fmt == "mscb" else "ply-binary-le"
    io.save_cloud(pair.query.cloud, out / f"{stem}_q.{ext}", wfmt)
    io.save_cloud(pair.key.cloud, out / f"{stem}_k.{ext}", wfmt)
    io.save_arrays(out / f"{stem}_meta.msca", ffi.pair_descriptors(pair, masks, corr))
    if previews:
        for view, mask, tag in ((pair.query, masks.mask_query, "q"),
                                (pair.key, masks.mask_key, "k")):
            colors = view.cloud.colors.copy()
            colors[mask] = (1.0, 0.0, 0.0)
            io.save_cloud(view.cloud.with_fields(colors=colors),
                          out / f"{stem}_{tag}_mask.ply", "ply-binary-le")
    return corr.n


def cmd_viewgen(args) -> int:
    cfg = _load_cfg(args)
    paths = _scene_paths(Path(args.input))
    if not paths:
        raise DataError(f"no input clouds found under {args.input}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [
        (cfg.seed, i, str(p), str(out), cfg, args.format, args.mask_previews)
        for i, p in enumerate(paths)
    ]
    nw = _workers(args)
    if nw > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            counts = list(pool.map(_viewgen_worker, tasks))
    else:
        counts = [_viewgen_worker(t) for t in tasks]
    log.info("generated %d view pairs (median matches %d)", len(counts),
             int(np.median(counts)) if counts else 0)
    return 0


# ------------------------------------------------------------- match-stats

def cmd_match_stats(args) -> int:
    cfg = _load_cfg(args)
    paths = _scene_paths(Path(args.input))
    if not paths:
        raise DataError(f"no input clouds found under {args.input}")
    lines = ["scene,n_query,n_key,n_pairs_raw,n_pairs"]
    from .correspond import match_views

    for i, p in enumerate(paths):
        source = io.load_cloud(p)
        pair, masks, corr = ffi.scene_pipeline(source, cfg, cfg.seed, i)
        raw = match_views(pair.query, pair.key, cfg.matching_epsilon(), n_max=None)
        lines.append(f"{p.stem},{pair.query.n},{pair.key.n},{raw.n},{corr.n}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# --------------------------------------------------------------- pretrain

def _config_fingerprint(cfg: Config) -> bytes:
    # steps is the run horizon, not pipeline identity: resume may extend it
    text = "\n".join(line for line in dump_config(cfg).splitlines()
                     if not line.startswith("steps ="))
    return hashlib.sha256(text.encode()).digest()


def _save_checkpoint(path, params: EncoderParams, opt: OptState, step: int, cfg: Config):
    arrays = {f"param/{k}": v for k, v in params.as_dict().items()}
    arrays.update({f"vel/{k}": v for k, v in opt.velocity.items()})
    arrays["meta/step"] = np.array([step], dtype=np.int64)
    arrays["meta/seed"] = np.array([cfg.seed], dtype=np.int64)
    arrays["meta/cfg"] = np.frombuffer(_config_fingerprint(cfg), dtype=np.uint8)
    io.save_arrays(path, arrays)


def _load_checkpoint(path, cfg: Config):
    arrays = io.load_arrays(path)
    if bytes(arrays["meta/cfg"].tobytes()) != _config_fingerprint(cfg):
        raise DataError("checkpoint was written with a different config")
    if int(arrays["meta/seed"][0]) != cfg.seed:
        raise DataError("checkpoint was written with a different seed")
    params = EncoderParams.from_dict(
        {k[len("param/"):]: np.array(v) for k, v in arrays.items() if k.startswith("param/")},
        agg_radius=cfg.agg_radius,
    )
    vel = {k[len("vel/"):]: np.array(v) for k, v in arrays.items() if k.startswith("vel/")}
    opt = OptState(velocity=vel, lr=cfg.lr, momentum=cfg.momentum)
    return params, opt, int(arrays["meta/step"][0])


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    paths = _scene_paths(Path(args.data))
    if not paths:
        raise DataError(f"empty dataset: no clouds under {args.data}")
    scenes = []
    normal_valid = {}
    for i, p in enumerate(paths):
        cloud = io.load_cloud(p)
        if cloud.n < 8:
            raise DataError(f"scene {p} too small ({cloud.n} points)")
        cloud, valid = ensure_normals(cloud, k=cfg.surfel_k)
        scenes.append(cloud)
        if not valid.all():
            normal_valid[i] = valid
    log.info("loaded %d scenes", len(scenes))

    params = EncoderParams.init(cfg.hidden_dim, cfg.feat_dim,
                                Rng.for_stream(cfg.seed, DOMAIN_INIT, 0),
                                agg_radius=cfg.agg_radius)
    opt = OptState.init(params, cfg.lr, cfg.momentum)
    start = 1
    metrics_path = Path(args.metrics)
    if args.resume:
        params, opt, last_step = _load_checkpoint(args.resume, cfg)
        start = last_step + 1
        if not metrics_path.exists():
            raise DataError("--resume needs the existing metrics CSV to append to")
        mode = "a"
    else:
        mode = "w"

    batch_size = min(cfg.batch, len(scenes))
    aug = cfg.augment_params()
    with open(metrics_path, mode) as mf:
        if mode == "w":
            mf.write(Metrics.CSV_HEADER + "\n")
        for step in range(start, cfg.steps + 1):
            rng_step = Rng.for_stream(cfg.seed, DOMAIN_STEP, step)
            idx = rng_step.choice(len(scenes), batch_size, replace=False)
            kids = rng_step.split(batch_size + 1)
            pairs = [
                generate_pair(scenes[int(i)], aug, kids[j], scene_id=int(i))
                for j, i in enumerate(idx)
            ]
            params, metrics = train_step(pairs, params, opt, cfg, kids[-1],
                                         normal_valid=normal_valid, step=step)
            if metrics is None:
                mf.write(f"{step},nan,nan,nan,nan,nan,nan\n")
            else:
                mf.write(metrics.csv_row() + "\n")
            mf.flush()
            if metrics is not None and (step % 20 == 0 or step == start):
                log.info("step %d: l_total=%.4f l_nce=%.4f neg_cos=%.3f std_min=%.3f",
                         step, metrics.l_total, metrics.l_nce, metrics.neg_cos,
                         metrics.feat_std_min)
    if args.checkpoint:
        _save_checkpoint(args.checkpoint, params, opt, cfg.steps, cfg)
        log.info("checkpoint written to %s", args.checkpoint)
    return 0


# ------------------------------------------------------------------ bench

def cmd_bench(args) -> int:
    cfg = _load_cfg(args)
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if not sizes:
        raise UsageError("--sizes needs at least one integer")
    if args.backend == "both":
        backends = kernels.available_backends()
    elif args.backend == "auto":
        backends = [kernels.backend_name()]
    else:
        if args.backend not in kernels.available_backends():
            raise UsageError(f"backend {args.backend!r} not available")
        backends = [args.backend]
    rows = bench_mod.run_bench(sizes, cfg, cfg.seed, backends, repeats=args.repeats)
    text = bench_mod.rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# -------------------------------------------------------------- gradcheck

def cmd_gradcheck(args) -> int:
    cfg = _load_cfg(args)
    report = gradcheck.full_report(cfg.seed, cfg, perturb=args.perturb)
    for line in report.lines():
        print(line)
    if not report.passed:
        raise NumericalError("gradient check failed")
    print("gradcheck: all blocks pass")
    return 0


# -------------------------------------------------------------------- ffi

def _read_request(spec: str) -> dict:
    if spec == "-":
        return io.unpack_arrays(sys.stdin.buffer.read())
    return io.load_arrays(spec)


def _write_response(spec: str, arrays: dict) -> None:
    buf = io.pack_arrays(arrays)
    if spec == "-":
        sys.stdout.buffer.write(buf)
        sys.stdout.buffer.flush()
    else:
        Path(spec).write_bytes(buf)


def cmd_ffi(args) -> int:
    if args.ffi_op == "abi-version":
        print(ffi.abi_version())
        return 0
    req = _read_request(args.input)
    if args.ffi_op == "generate-pair":
        resp = ffi.handle_generate_pair(req)
    elif args.ffi_op == "losses":
        resp = ffi.handle_losses(req)
    else:
        raise UsageError(f"unknown ffi op {args.ffi_op!r}")
    _write_response(args.out, resp)
    return 0


# ------------------------------------------------------------------- main

def build_parser() -> _Parser:
    p = _Parser(prog="msc", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--workers", type=int, default=None,
                        help="process pool size (default: cpu count)")

    sp = sub.add_parser("synth", help="generate synthetic scenes as mscb")
    common(sp)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("viewgen", help="dump augmented view pairs + mask previews")
    common(sp)
    sp.add_argument("--in", dest="input", required=True, help="cloud file or directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=("mscb", "ply"), default="mscb")
    sp.add_argument("--mask-previews", action="store_true",
                    help="also write PLYs with masked points recolored red")
    sp.set_defaults(fn=cmd_viewgen)

    sp = sub.add_parser("match-stats", help="CSV of match counts per scene")
    common(sp)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", default=None, help="CSV path (default stdout)")
    sp.set_defaults(fn=cmd_match_stats)

    sp = sub.add_parser("pretrain", help="run the self-supervised training loop")
    common(sp)
    sp.add_argument("--data", required=True, help="directory of scene clouds")
    sp.add_argument("--metrics", required=True, help="per-step metrics CSV path")
    sp.add_argument("--checkpoint", default=None, help="final checkpoint path")
    sp.add_argument("--resume", default=None, help="checkpoint to resume from")
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("bench", help="per-stage throughput CSV "
                        f"(columns: {bench_mod.BENCH_CSV_HEADER})")
    common(sp)
    sp.add_argument("--sizes", required=True, help="comma-separated point counts")
    sp.add_argument("--out", default=None, help="CSV path (default stdout)")
    sp.add_argument("--backend", choices=("auto", "py", "cy", "both"), default="auto")
    sp.add_argument("--repeats", type=int, default=3)
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(sp)
    sp.add_argument("--perturb", default=None,
                    help="corrupt one gradient block (negative control)")
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("ffi", help="flat-array service ops for foreign callers")
    common(sp)
    sp.add_argument("ffi_op", choices=("abi-version", "generate-pair", "losses"))
    sp.add_argument("--in", dest="input", default="-", help="request file or - for stdin")
    sp.add_argument("--out", default="-", help="response file or - for stdout")
    sp.set_defaults(fn=cmd_ffi)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except MscError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
