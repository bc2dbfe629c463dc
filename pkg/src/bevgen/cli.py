"""Command-line entry points tying the pipeline together.

Commands: gen-data, train-vq, train-prior, sample, eval, bench-attn.
Each takes ``--config <path>`` plus optional ``--seed`` and ``--out``
overrides. Exit codes: 0 success, 2 configuration error (every violated
field is listed), 3 training divergence.

All artifacts land in the output directory (``run.out``); checkpoint
paths in the config are resolved against it. Reruns with the same
config and seed reproduce every artifact byte for byte, except the
wall-clock columns of benchmark and evaluation reports.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import config as cfgmod
from . import prior as pr
from . import report
from . import scenegen as sg
from . import vq as vqmod
from .attention import block_sparse_attention, build_bias, build_sparse_mask, \
    dense_attention_flops, dense_masked_attention, full_causal_mask, \
    sparse_attention_flops
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError
from .geometry import BevLayout, direction_field, save_rig
from .numcore import AdamW
from .sequence import SequenceLayout
from .vq import DivergenceError, VqAutoencoder, decode_tokens, encode_tokens


def _worker_count(cfg):
    env = os.environ.get("BEVGEN_THREADS", "")
    if env.isdigit() and int(env) > 0:
        return int(env)
    return max(1, cfg["run.threads"]) if cfg["run.threads"] else 1


def _artifact(out_dir, path):
    return path if os.path.isabs(path) else os.path.join(out_dir, path)


def _rig_from(cfg):
    return sg.make_rig(cfg["data.cameras"],
                       image=(cfg["data.image_h"], cfg["data.image_w"]),
                       latent=(cfg["data.cam_latent_h"],
                               cfg["data.cam_latent_w"]),
                       fov_deg=cfg["data.fov_deg"])


def _bev_layout_from(cfg):
    cells = cfg["data.bev_cells"]
    grid = np.zeros((cells, cells, len(sg.BEV_CHANNELS)))
    return BevLayout(grid, cfg["data.extent_m"] / cells,
                     list(sg.BEV_CHANNELS),
                     cfg["data.bev_latent"], cfg["data.bev_latent"])


def _seq_layout_from(cfg):
    return SequenceLayout(cfg["data.cameras"], cfg["data.cam_latent_h"],
                          cfg["data.cam_latent_w"], cfg["data.bev_latent"],
                          cfg["data.bev_latent"],
                          center_out=cfg["prior.center_out"])


def _load_records(cfg):
    data_dir = cfg["data.dir"]
    manifest = os.path.join(data_dir, "manifest.txt")
    if not os.path.isfile(manifest):
        raise ConfigError([f"data.dir: no dataset manifest at {manifest} "
                           "(run gen-data first)"])
    records = []
    for _idx, _seed, name, _nb in sg.read_manifest(data_dir):
        records.append(sg.read_record(os.path.join(data_dir, name)))
    return records


# -- gen-data ---------------------------------------------------------------------


def _gen_one(args):
    """Worker: render one scene record (module-level for pickling)."""
    (path, seed, difficulty, cameras, image, cam_latent, cells, bev_latent,
     extent, fov) = args
    scene_cfg = sg.SceneConfig.difficulty(difficulty)
    scene_cfg.extent_m = extent
    rig = sg.make_rig(cameras, image=image, latent=cam_latent, fov_deg=fov)
    scene = sg.sample_scene(seed, scene_cfg)
    bev = sg.rasterize_bev(scene, cells=cells,
                           latent=(bev_latent, bev_latent))
    images, masks = sg.render_views(scene, rig)
    sg.write_record(path, scene, bev, images, masks)
    return len(scene.boxes)


def cmd_gen_data(cfg, out_dir):
    data_dir = report.ensure_dir(cfg["data.dir"])
    seeds = [cfg["data.seed_start"] + i for i in range(cfg["data.n_scenes"])]
    jobs = []
    for idx, seed in enumerate(seeds):
        jobs.append((os.path.join(data_dir, sg.record_name(idx)), seed,
                     cfg["data.difficulty"], cfg["data.cameras"],
                     (cfg["data.image_h"], cfg["data.image_w"]),
                     (cfg["data.cam_latent_h"], cfg["data.cam_latent_w"]),
                     cfg["data.bev_cells"], cfg["data.bev_latent"],
                     cfg["data.extent_m"], cfg["data.fov_deg"]))
    workers = _worker_count(cfg)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            box_counts = list(pool.map(_gen_one, jobs))
    else:
        box_counts = [_gen_one(job) for job in jobs]
    lines = [f"# config {cfg.hash}", "# index seed file n_boxes"]
    for idx, (seed, boxes) in enumerate(zip(seeds, box_counts)):
        lines.append(f"{idx} {seed} {sg.record_name(idx)} {boxes}")
    with open(os.path.join(data_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    save_rig(_rig_from(cfg), os.path.join(data_dir, "rig.txt"))
    with open(os.path.join(data_dir, "config.txt"), "w") as fh:
        fh.write(cfg.text)
    print(f"wrote {len(seeds)} records to {data_dir}")


# -- train-vq ---------------------------------------------------------------------


def _vq_training_data(cfg, records):
    if cfg["vq.kind"] == "image":
        stack = np.concatenate([r["images"] for r in records])
        x = stack.transpose(0, 3, 1, 2)
        latent = (cfg["data.cam_latent_h"], cfg["data.cam_latent_w"])
        spatial = (cfg["data.image_h"], cfg["data.image_w"])
        tags = None
    else:
        x = np.stack([r["grid"] for r in records]).transpose(0, 3, 1, 2)
        latent = (cfg["data.bev_latent"], cfg["data.bev_latent"])
        spatial = (cfg["data.bev_cells"], cfg["data.bev_cells"])
        tags = list(sg.BEV_CHANNELS)
    factor = 2 ** cfg["vq.stages"]
    if (spatial[0] // factor, spatial[1] // factor) != latent or \
            spatial[0] % factor or spatial[1] % factor:
        raise ConfigError([
            f"vq.stages: {cfg['vq.stages']} halvings take {spatial} to "
            f"{(spatial[0] // factor, spatial[1] // factor)}, not {latent}"])
    return x, tags


def cmd_train_vq(cfg, out_dir):
    records = _load_records(cfg)
    x, tags = _vq_training_data(cfg, records)
    rng = np.random.default_rng(cfg["run.seed"])
    model = VqAutoencoder(x.shape[1], cfg["vq.stages"], cfg["vq.base"],
                          cfg["vq.dim"], cfg["vq.codebook"], cfg["vq.kind"],
                          rng, channel_tags=tags)
    opt = AdamW(model.parameters().values(), lr=cfg["vq.lr"])
    history = []
    for step in range(cfg["vq.steps"]):
        idx = rng.integers(0, x.shape[0], size=min(cfg["vq.batch"],
                                                   x.shape[0]))
        loss = vqmod.vq_train_step(model, x[idx], opt, step=step, rng=rng,
                                   reseed_after=cfg["vq.reseed_after"])
        history.append({"step": step, "loss": float(loss)})
    ckpt = _artifact(out_dir, cfg["vq.checkpoint"])
    blocks = {name: t.data for name, t in model.parameters().items()}
    save_checkpoint(ckpt, cfg.text, blocks)
    log = _artifact(out_dir, cfg["vq.log"])
    report.write_csv(log, ["step", "loss"],
                     [(h["step"], repr(h["loss"])) for h in history])
    report.training_curve(os.path.splitext(log)[0] + ".png", history,
                          title=f"vq/{cfg['vq.kind']} {cfg.hash}")
    print(f"saved {ckpt} (final loss {history[-1]['loss']:.4f})")


def _vq_from_checkpoint(path, field):
    if not os.path.isfile(path):
        raise ConfigError([f"{field}: checkpoint not found: {path} "
                           "(run train-vq first)"])
    text, blocks = load_checkpoint(path)
    echo = cfgmod.config_from_text(text)
    kind = echo["vq.kind"]
    tags = list(sg.BEV_CHANNELS) if kind == "bev" else None
    in_ch = len(sg.BEV_CHANNELS) if kind == "bev" else 3
    codebook = blocks["codebook.vectors"].shape[0]
    model = VqAutoencoder(in_ch, echo["vq.stages"], echo["vq.base"],
                          echo["vq.dim"], codebook, kind,
                          np.random.default_rng(0), channel_tags=tags)
    model.load_parameters(blocks)
    return model, echo


# -- train-prior ------------------------------------------------------------------


def _encode_dataset(cfg, records, img_vq, bev_vq, layout):
    """Records -> (sequences (N, total), weights (N, n_cam) or None)."""
    cam_tokens, bev_tokens, weight_rows = [], [], []
    for rec in records:
        imgs = rec["images"].transpose(0, 3, 1, 2)
        cam_tokens.append(encode_tokens(img_vq, imgs))
        grid = rec["grid"].transpose(2, 0, 1)[None]
        bev_tokens.append(encode_tokens(bev_vq, grid)[0])
        if cfg["prior.w_fg"] > 1.0:
            weight_rows.append(pr.foreground_weights(layout, rec["masks"],
                                                     boost=cfg["prior.w_fg"]))
    seqs = pr.sequence_tokens(layout, img_vq.codebook.size,
                              np.stack(bev_tokens), np.stack(cam_tokens))
    weights = np.stack(weight_rows) if weight_rows else None
    return seqs, weights


def _build_model(cfg, layout, dirs, vocab_img, vocab_bev):
    mask = None
    if cfg["prior.attention"] == "sparse":
        beta = build_bias(dirs, layout).data
        beta_img = beta[layout.n_bev:, layout.n_bev:]
        sparse = build_sparse_mask(beta_img, layout.n_bev,
                                   density=cfg["prior.density"],
                                   window=cfg["prior.window"],
                                   block=cfg["prior.block"],
                                   seed=cfg["run.seed"])
        mask = sparse.token_mask()
    theta = cfg["prior.theta_mode"]
    return pr.PriorModel(
        layout, dirs, vocab_img, vocab_bev,
        np.random.default_rng(cfg["run.seed"]),
        n_emb=cfg["prior.width"], n_head=cfg["prior.heads"],
        n_layer=cfg["prior.layers"], dropout=cfg["prior.dropout"],
        theta_mode=None if theta == "none" else theta,
        direction_bias=cfg["prior.camera_bias"],
        spatial_embed=cfg["prior.spatial_embed"],
        normalize_directions=cfg["prior.normalize_directions"],
        mask=mask)


def cmd_train_prior(cfg, out_dir):
    records = _load_records(cfg)
    img_vq, _ = _vq_from_checkpoint(_artifact(out_dir, cfg["prior.image_vq"]),
                                    "prior.image_vq")
    bev_vq, _ = _vq_from_checkpoint(_artifact(out_dir, cfg["prior.bev_vq"]),
                                    "prior.bev_vq")
    if img_vq.kind != "image" or bev_vq.kind != "bev":
        raise ConfigError([
            f"prior.image_vq: checkpoint kind is {img_vq.kind!r}"
            if img_vq.kind != "image" else
            f"prior.bev_vq: checkpoint kind is {bev_vq.kind!r}"])
    rig = _rig_from(cfg)
    bev_layout = _bev_layout_from(cfg)
    dirs = direction_field(rig, bev_layout,
                           pure_direction=cfg["prior.pure_direction"])
    layout = _seq_layout_from(cfg)
    seqs, weights = _encode_dataset(cfg, records, img_vq, bev_vq, layout)
    model = _build_model(cfg, layout, dirs, img_vq.codebook.size,
                         bev_vq.codebook.size)
    ckpt = _artifact(out_dir, cfg["prior.checkpoint"])
    every = cfg["prior.ckpt_every"]

    def on_step(step, record):
        if every and (step + 1) % every == 0 and step + 1 < cfg["prior.steps"]:
            stem, ext = os.path.splitext(ckpt)
            blocks = {n: t.data for n, t in model.parameters().items()}
            save_checkpoint(f"{stem}_step{step + 1}{ext}", cfg.text, blocks)

    history = pr.train_prior(model, seqs, cfg["prior.steps"],
                             np.random.default_rng(cfg["run.seed"]),
                             weights=weights, lr=cfg["prior.lr"],
                             betas=(cfg["prior.beta1"], cfg["prior.beta2"]),
                             weight_decay=cfg["prior.weight_decay"],
                             batch_size=cfg["prior.batch"],
                             clip=cfg["prior.clip"], on_step=on_step)
    blocks = {name: t.data for name, t in model.parameters().items()}
    save_checkpoint(ckpt, cfg.text, blocks)
    log = _artifact(out_dir, cfg["prior.log"])
    report.write_csv(log, ["step", "loss", "grad_norm"],
                     [(h["step"], repr(h["loss"]), repr(h["grad_norm"]))
                      for h in history])
    report.training_curve(os.path.splitext(log)[0] + ".png", history,
                          title=f"prior {cfg.hash}")
    print(f"saved {ckpt} (final loss {history[-1]['loss']:.4f})")


def _prior_from_checkpoint(path, field):
    if not os.path.isfile(path):
        raise ConfigError([f"{field}: checkpoint not found: {path} "
                           "(run train-prior first)"])
    text, blocks = load_checkpoint(path)
    echo = cfgmod.config_from_text(text)
    rig = _rig_from(echo)
    bev_layout = _bev_layout_from(echo)
    dirs = direction_field(rig, bev_layout,
                           pure_direction=echo["prior.pure_direction"])
    layout = _seq_layout_from(echo)
    vocab_img = blocks["head.w"].shape[1]
    vocab_bev = blocks["embed.token"].shape[0] - vocab_img
    model = _build_model(echo, layout, dirs, vocab_img, vocab_bev)
    model.load_parameters(blocks)
    model.eval_mode()
    return model, echo, rig


# -- sample -----------------------------------------------------------------------


def _provided_view_tokens(cfg, rig, img_vq, record):
    names = [n.strip() for n in cfg["sample.provide_views"].split(",")
             if n.strip()]
    if not names:
        return {}
    unknown = [n for n in names if n not in rig.names]
    if unknown:
        raise ConfigError([f"sample.provide_views: unknown camera name "
                           f"{n!r} (rig has {rig.names})" for n in unknown])
    provided = {}
    for name in names:
        k = rig.names.index(name)
        img = record["images"][k].transpose(2, 0, 1)[None]
        provided[k] = encode_tokens(img_vq, img)[0]
    return provided


def cmd_sample(cfg, out_dir):
    model, echo, rig = _prior_from_checkpoint(
        _artifact(out_dir, cfg["sample.prior"]), "sample.prior")
    img_vq, _ = _vq_from_checkpoint(_artifact(out_dir, cfg["prior.image_vq"]),
                                    "prior.image_vq")
    bev_vq, _ = _vq_from_checkpoint(_artifact(out_dir, cfg["prior.bev_vq"]),
                                    "prior.bev_vq")
    records = _load_records(cfg)
    index = cfg["sample.source_index"]
    if index >= len(records):
        raise ConfigError([f"sample.source_index: {index} out of range "
                           f"(dataset has {len(records)} records)"])
    record = records[index]
    bev_grid = record["grid"].transpose(2, 0, 1)[None]
    bev_tokens = encode_tokens(bev_vq, bev_grid)[0]
    provided = _provided_view_tokens(cfg, rig, img_vq, record)
    count = cfg["sample.count"]
    top_k = cfg["sample.top_k"] or None
    rng = np.random.default_rng(cfg["run.seed"])
    batch_bev = np.broadcast_to(bev_tokens, (count,) + bev_tokens.shape)
    grids = pr.generate(model, batch_bev, rng, top_k=top_k,
                        temperature=cfg["sample.temperature"],
                        provided_views={k: np.broadcast_to(g, (count,) + g.shape)
                                        for k, g in provided.items()})
    rows, csv_rows, sheet = [], [], []
    for s in range(count):
        decoded = decode_tokens(img_vq, grids[s])        # (n, 3, H, W)
        images = decoded.transpose(0, 2, 3, 1)
        sheet.append([images[k] for k in range(len(rig))])
        for k, name in enumerate(rig.names):
            fname = f"sample{s}_{name}.png"
            report.save_png(os.path.join(out_dir, fname), images[k])
            csv_rows.append((s, name, fname, cfg.hash, cfg["run.seed"]))
        token_path = os.path.join(out_dir, f"sample{s}_tokens.txt")
        with open(token_path, "w") as fh:
            fh.write(f"# bev {bev_tokens.shape[0]}x{bev_tokens.shape[1]}\n")
            np.savetxt(fh, bev_tokens, fmt="%d")
            for k, name in enumerate(rig.names):
                fh.write(f"# {name} {grids.shape[-2]}x{grids.shape[-1]}\n")
                np.savetxt(fh, grids[s, k], fmt="%d")
        rows.append(f"sample {s}")
    report.contact_sheet(os.path.join(out_dir, "samples.png"), sheet,
                         row_titles=rows,
                         title=f"conditioned on record {index}")
    report.write_csv(os.path.join(out_dir, "sample_report.csv"),
                     ["sample", "camera", "file", "config_hash", "seed"],
                     csv_rows)
    print(f"wrote {count} sample(s) x {len(rig)} view(s) to {out_dir}")


# -- eval -------------------------------------------------------------------------


def _token_accuracy(model, seqs, batch_size):
    from . import numcore as nc
    hits, total = 0, 0
    with nc.no_grad():
        for lo in range(0, seqs.shape[0], batch_size):
            chunk = seqs[lo:lo + batch_size]
            logits = model.forward(chunk).data
            preds = np.argmax(logits, axis=-1)
            targets = chunk[:, model.layout.n_bev:]
            hits += int((preds == targets).sum())
            total += targets.size
    return hits / total


def _vehicle_iou(images, masks):
    """Mean IoU between detected vehicle pixels and oracle vehicle masks."""
    scores = []
    for img_stack, mask_stack in zip(images, masks):
        pred = np.concatenate([sg.vehicle_pixels(im).ravel()
                               for im in img_stack])
        true = np.concatenate([(m & 1).astype(bool).ravel()
                               for m in mask_stack])
        union = (pred | true).sum()
        scores.append((pred & true).sum() / union if union else 1.0)
    return float(np.mean(scores))


def _correspondence_iou(cfg, model, img_vq, bev_vq, records, rng):
    """Vehicle IoU of generated views, and of a layout-shuffled control."""
    n = min(cfg["eval.iou_layouts"], len(records))
    if n == 0:
        return None, None
    subset = records[:n]
    bev = np.stack([encode_tokens(
        bev_vq, r["grid"].transpose(2, 0, 1)[None])[0] for r in subset])
    masks = [r["masks"] for r in subset]
    grids = pr.generate(model, bev, rng, top_k=cfg["sample.top_k"] or None,
                        temperature=cfg["sample.temperature"])
    decoded = [decode_tokens(img_vq, g).transpose(0, 2, 3, 1) for g in grids]
    iou = _vehicle_iou(decoded, masks)
    # control: same generations scored against a rotated set of layouts
    control = _vehicle_iou(decoded, masks[1:] + masks[:1])
    return iou, control


def _flops_rows(model, repeats, rng):
    """FLOPs and wall-clock for the model's attention shape."""
    s = model.layout.total
    head_dim = model.n_emb
    q, k, v = rng.normal(size=(3, s, head_dim))
    causal = full_causal_mask(s)
    rows = []
    best = min(_time_ns(dense_masked_attention, q, k, v, causal)
               for _ in range(repeats))
    rows.append(("flops_dense", dense_attention_flops(s, head_dim)))
    rows.append(("wall_ns_dense", best))
    return rows


def _time_ns(fn, *args):
    t0 = time.perf_counter_ns()
    fn(*args)
    return time.perf_counter_ns() - t0


def cmd_eval(cfg, out_dir):
    model, echo, rig = _prior_from_checkpoint(
        _artifact(out_dir, cfg["eval.prior"]), "eval.prior")
    img_vq, _ = _vq_from_checkpoint(_artifact(out_dir, cfg["prior.image_vq"]),
                                    "prior.image_vq")
    bev_vq, _ = _vq_from_checkpoint(_artifact(out_dir, cfg["prior.bev_vq"]),
                                    "prior.bev_vq")
    records = _load_records(cfg)
    holdout = min(cfg["eval.holdout"], len(records))
    held = records[-holdout:]
    layout = model.layout
    seqs, _weights = _encode_dataset(cfg, held, img_vq, bev_vq, layout)
    nll = pr.sequence_nll(model, seqs, batch_size=cfg["eval.batch"])
    accuracy = _token_accuracy(model, seqs, cfg["eval.batch"])
    rng = np.random.default_rng(cfg["run.seed"])
    iou, iou_control = _correspondence_iou(cfg, model, img_vq, bev_vq, held,
                                           rng)
    metrics = [("holdout_nll", nll), ("token_accuracy", accuracy)]
    if iou is not None:
        metrics += [("vehicle_iou", iou), ("vehicle_iou_shuffled",
                                           iou_control)]
    metrics += _flops_rows(model, cfg["bench.repeats"], rng)
    for spec in [s.strip() for s in cfg["eval.ablations"].split(",")
                 if s.strip()]:
        if "=" not in spec:
            raise ConfigError([f"eval.ablations: expected name=path, "
                               f"got {spec!r}"])
        name, _, path = spec.partition("=")
        other, _oe, _or = _prior_from_checkpoint(
            _artifact(out_dir, path.strip()), "eval.ablations")
        o_seqs, _ = _encode_dataset(cfg, held, img_vq, bev_vq, other.layout)
        metrics.append((f"nll_{name.strip()}",
                        pr.sequence_nll(other, o_seqs,
                                        batch_size=cfg["eval.batch"])))
        metrics.append((f"accuracy_{name.strip()}",
                        _token_accuracy(other, o_seqs, cfg["eval.batch"])))
    rows = [(name, repr(float(value)), cfg.hash, cfg["run.seed"])
            for name, value in metrics]
    report.write_csv(os.path.join(out_dir, "eval_report.csv"),
                     ["metric", "value", "config_hash", "seed"], rows)
    bars = [(n, v) for n, v in metrics if not n.startswith(("wall", "flops"))]
    report.metric_bars(os.path.join(out_dir, "eval_metrics.png"),
                       [n for n, _ in bars], [v for _, v in bars],
                       "value", title=f"eval {cfg.hash}")
    for name, value in metrics:
        print(f"{name} = {value}")


# -- bench-attn -------------------------------------------------------------------


def cmd_bench_attn(cfg, out_dir):
    rng = np.random.default_rng(cfg["run.seed"])
    block = cfg["bench.block"]
    window = cfg["bench.window"]
    head_dim = cfg["bench.head_dim"]
    n_bev = cfg["bench.n_bev"]
    repeats = cfg["bench.repeats"]
    rows = []
    flops_series = {}
    for s_img in cfg["bench.seq_lens"]:
        d = rng.normal(size=(s_img, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        beta = d @ d.T
        s = n_bev + s_img
        q, k, v = rng.normal(size=(3, s, head_dim))
        causal = full_causal_mask(s)
        dense_flops = dense_attention_flops(s, head_dim)
        wall = min(_time_ns(dense_masked_attention, q, k, v, causal)
                   for _ in range(repeats))
        rows.append((s_img, 1.0, block, "dense", dense_flops, wall))
        series = []
        for density in cfg["bench.densities"]:
            mask = build_sparse_mask(beta, n_bev, density=density,
                                     window=window, block=block,
                                     seed=cfg["run.seed"])
            flops = sparse_attention_flops(mask, head_dim)
            wall = min(_time_ns(block_sparse_attention, q, k, v, mask)
                       for _ in range(repeats))
            rows.append((s_img, density, block, "sparse", flops, wall))
            series.append(flops / dense_flops)
        flops_series[f"S_img={s_img}"] = series
    report.write_csv(os.path.join(out_dir, "bench_attn.csv"),
                     ["seq_len", "density", "block", "mode", "flops",
                      "wall_ns"], rows)
    report.line_plot(os.path.join(out_dir, "bench_attn.png"),
                     list(cfg["bench.densities"]), flops_series,
                     "target density", "flops / dense",
                     title=f"bench-attn {cfg.hash}")
    print(f"wrote bench_attn.csv ({len(rows)} rows) to {out_dir}")


# -- entry point ------------------------------------------------------------------

COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-vq": cmd_train_vq,
    "train-prior": cmd_train_prior,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "bench-attn": cmd_bench_attn,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="bevgen",
        description="BEV-conditioned multi-view image generation pipeline")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, metavar="PATH")
    parser.add_argument("--seed", type=int, default=None,
                        help="override run.seed (and data.seed_start "
                             "for gen-data)")
    parser.add_argument("--out", default=None, metavar="DIR",
                        help="override run.out")
    args = parser.parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config)
        overrides = {"run.seed": args.seed, "run.out": args.out}
        if args.seed is not None and args.command == "gen-data":
            overrides["data.seed_start"] = args.seed
        cfg = cfg.with_overrides(**overrides)
        out_dir = report.ensure_dir(cfg["run.out"])
        COMMANDS[args.command](cfg, out_dir)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
