"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line that is printed in the terminal summary
(see ``pytest_terminal_summary`` in conftest.py).
"""
import time

import numpy as np
import pytest

from conftest import DATA, site_config
from gradcases import full_xception_case, layer_cases, unit_cases
from oracles import flood_fill_partition, label_partition
from tenderscan.fetcher import SizeMismatch, SourceConfig, download_dir_for, download_file
from tenderscan.neuralnet import (
    ARCHS,
    TrainConfig,
    build_model,
    evaluate_model,
    load_weights,
    save_weights,
    train_model,
    train_test_split,
    write_history_csv,
)
from tenderscan.neuralnet.gradcheck import grad_check
from tenderscan.neuralnet.metrics import metrics_from_confusion
from tenderscan.ocrfilter import parse_ocr_tsv, serialize_ocr_tsv
from tenderscan.pipeline.config import PipelineConfig
from tenderscan.pipeline.manifest import Manifest, export_manifest, load_manifest
from tenderscan.pipeline.report import compare_models_report, load_training_runs, read_table_csv, write_report
from tenderscan.pipeline.run import run_full
from tenderscan.pipeline.synthetic import CorpusSpec, generate_synthetic_corpus, make_patch_dataset
from tenderscan.pipeline.trainer import train_classifier
from tenderscan.segmenter import connected_components, segment_page

RESULTS = []


def verdict(name, ok, detail):
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def test_metric_formula_reproduction():
    worst = 0.0
    rows = read_table_csv(DATA / "reference_table.csv")
    for r in rows:
        # counts that realise the printed precision and recall
        tp = 10 ** 7
        fp = round(tp * (1 - r.precision) / r.precision)
        fn = round(tp * (1 - r.recall) / r.recall)
        worst = max(worst, abs(metrics_from_confusion(tp, fp, fn, tp).f1 - r.f1))
    verdict("metric formula", len(rows) == 6 and worst <= 5e-4,
            f"{len(rows)} published F1 values, max |diff| {worst:.2e} (tol 5e-4)")


def test_gradient_oracle():
    t0 = time.perf_counter()
    failures, worst, n = [], 0.0, 0
    for name, layer, shape in layer_cases():
        rep = grad_check(layer, shape, tolerance=1e-4, seed=1)
        n += 1
        worst = max(worst, rep.max_error)
        if not rep.passed:
            failures.append(name)
    for name, unit, shape in unit_cases() + [full_xception_case()]:
        rep = grad_check(unit, shape, tolerance=1e-4, seed=2)
        n += 1
        worst = max(worst, rep.max_error)
        if not rep.passed:
            failures.append(name)
    dt = time.perf_counter() - t0
    verdict("gradient oracle", not failures and dt < 60,
            f"{n} cases, max rel err {worst:.2e} (tol 1e-4), {dt:.1f}s (limit 60s)"
            + (f", failed: {failures}" if failures else ""))


def test_architecture_audit():
    t0 = time.perf_counter()
    problems = []
    x = np.random.default_rng(0).random((2, 1, 224, 224))
    for arch, outputs in (("resnet", 1), ("googlenet", 1), ("xception", 2)):
        model = build_model(arch, 224, seed=0)
        chain = model.shape_chain()
        dense = [layer.units for _, layer in model.body.sublayers() if hasattr(layer, "units")]
        want_dense = [32, 2, 1] if outputs == 1 else [2]
        probs = model.probabilities(x)
        if chain[0][1] != (1, 224, 224) or chain[-1][1] != (outputs,):
            problems.append(f"{arch} chain {chain[0][1]}->{chain[-1][1]}")
        if dense != want_dense:
            problems.append(f"{arch} dense {dense}")
        if model.forward(x).shape != (2, outputs):
            problems.append(f"{arch} forward shape")
        if outputs == 2 and not np.allclose(probs.sum(axis=1), 1.0):
            problems.append(f"{arch} softmax rows")
        if not ((probs >= 0) & (probs <= 1)).all():
            problems.append(f"{arch} probabilities")
    dt = time.perf_counter() - t0
    verdict("architecture audit", not problems and dt < 30,
            f"heads 1/1/2 at 224, dense widths checked, {dt:.1f}s (limit 30s)"
            + (f", problems: {problems}" if problems else ""))


def _desk_run(tmp_dir, tag):
    x, y = make_patch_dataset(400, 64, seed=0)
    train, test = train_test_split(x, y, 0.2, seed=0)
    model = build_model("xception", 64, "tiny", seed=0)
    res = train_model(model, train, test, TrainConfig(epochs=30, batch_size=32, seed=0))
    path = write_history_csv(res.history, tmp_dir / f"history-{tag}.csv")
    return model, res.history, path, test


@pytest.fixture(scope="module")
def desk_training(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    a = _desk_run(tmp, "a")
    dt = time.perf_counter() - t0
    b = _desk_run(tmp, "b")
    return {"model": a[0], "history": a[1], "csv": (a[2], b[2]), "test": a[3], "seconds": dt}


def test_desk_scale_training(desk_training):
    last = desk_training["history"][-1]
    held_out = evaluate_model(desk_training["model"], desk_training["test"]).accuracy
    a, b = desk_training["csv"]
    same = a.read_bytes() == b.read_bytes()
    dt = desk_training["seconds"]
    ok = last["train_acc"] >= 0.95 and held_out >= 0.90 and same and dt < 1200
    verdict("desk-scale training", ok,
            f"epoch {last['epoch']} train acc {last['train_acc']:.4f} (>=0.95), held-out acc {held_out:.4f} "
            f"(>=0.90), loss CSV identical across runs: {same}, {dt:.0f}s per run (limit 1200s)")


def test_checkpoint_protocol(tmp_path):
    # 64 samples keep three archs x 100 epochs within a few minutes on one core
    data = make_patch_dataset(64, 64, seed=0)
    cfg = PipelineConfig(input_size=64, width_preset="tiny")
    tc = TrainConfig(epochs=100, batch_size=16, seed=0, checkpoint_epochs=(50, 100))
    t0 = time.perf_counter()
    for arch in ARCHS:
        train_classifier(cfg, tmp_path / "runs", arch=arch, train_cfg=tc, dataset=data)
    dt = time.perf_counter() - t0
    files_ok = all((tmp_path / "runs" / f"{a}-epoch{e:03d}.tndr").exists() for a in ARCHS for e in (50, 100))
    required = [(a, e) for a in ARCHS for e in (50, 100)]
    ours = compare_models_report(load_training_runs(tmp_path / "runs"), required)
    written = write_report(ours, tmp_path / "report")
    published = compare_models_report(read_table_csv(DATA / "reference_table.csv"), required)
    ok = files_ok and len(ours.rows) == 6 and (tmp_path / "report" / "comparison.png").exists() \
        and published.selected.name == "xception@50"
    verdict("checkpoint protocol", ok,
            f"checkpoints 50/100 for {len(ARCHS)} archs: {files_ok}, report with {len(ours.rows)} rows and "
            f"{len(written)} files (ours selects {ours.selected.name}), published tables select "
            f"{published.selected.name}, {dt:.0f}s")


def test_segmentation_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    mismatches = 0
    for i in range(100):
        img = rng.random((64, 64)) < rng.uniform(0.2, 0.7)
        conn = 8 if i % 2 else 4
        labels, _ = connected_components(img, conn)
        if label_partition(labels) != flood_fill_partition(img, conn):
            mismatches += 1
    pages, truth = generate_synthetic_corpus(40, CorpusSpec(frames_per_page=3), seed=7)
    planted = recovered = duplicates = 0
    for page, frames in zip(pages, truth):
        boxes = [b for b, _ in segment_page(page)]
        duplicates += len(boxes) - len(set(boxes))
        for f in frames:
            planted += 1
            hits = [b for b in boxes if b.iou(f.bbox) >= 0.8]
            recovered += bool(hits)
            duplicates += max(0, len(hits) - 1)
    dt = time.perf_counter() - t0
    rate = recovered / planted
    verdict("segmentation oracle", mismatches == 0 and rate >= 0.95 and duplicates == 0 and dt < 120,
            f"flood-fill mismatches {mismatches}/100, recovered {recovered}/{planted} = {rate:.3f} at IoU>=0.8 "
            f"(>=0.95), duplicates {duplicates}, {dt:.1f}s (limit 120s)")


def _strip_volatile(m):
    d = m.to_dict()
    d.pop("run_id")
    d.pop("created_at")
    for r in d["records"]:
        r.pop("extracted_at")
    return d


def test_end_to_end_hermetic(tmp_path, desk_training):
    t0 = time.perf_counter()
    cfg, site = site_config(tmp_path, 8, CorpusSpec(frames_per_page=3), seed=21)
    model = desk_training["model"]
    first = run_full(cfg, "2026-03-01", model=model)
    second = run_full(cfg, "2026-03-01", model=model)
    dt = time.perf_counter() - t0
    truth = site["issues"][0][1]
    tenders = [(p, f.bbox) for p, frames in enumerate(truth) for f in frames if f.kind == "tender"]
    others = [(p, f.bbox) for p, frames in enumerate(truth) for f in frames if f.kind != "tender"]
    found = [(r.page, r.bbox) for r in first.records]

    def matched(target, pool):
        return any(p == target[0] and b.iou(target[1]) >= 0.8 for p, b in pool)

    missed = [t for t in tenders if not matched(t, found)]
    false = [o for o in others if matched(o, found)]
    same = _strip_volatile(first) == _strip_volatile(second)
    ok = tenders and not missed and not false and len(found) == len(tenders) and same and dt < 600
    verdict("end-to-end hermetic run", bool(ok),
            f"{len(tenders)} planted tenders, {len(found)} records, missed {len(missed)}, "
            f"non-tender frames kept {len(false)} of {len(others)}, rerun identical: {same}, {dt:.0f}s (limit 600s)")


def test_fetcher(mock_site, tmp_path):
    import hashlib

    body = np.random.default_rng(3).integers(0, 256, 1 << 20, dtype=np.uint8).tobytes()
    mock_site.routes["/full.pdf"] = {"body": body, "chunk": 65536}
    mock_site.routes["/cut.pdf"] = {"body": body, "chunk": 65536, "chunk_delay": 0.02, "truncate_at": 400_000}
    cfg = SourceConfig(mock_site.url("/"), name="mock", download_dir=str(tmp_path), timeout=5000, poll_interval=50)
    rec = download_file(mock_site.url("/full.pdf"), cfg, "d")
    hash_ok = rec.sha256 == hashlib.sha256(body).hexdigest() == hashlib.sha256(open(rec.path, "rb").read()).hexdigest()
    try:
        download_file(mock_site.url("/cut.pdf"), cfg, "d")
        raised = False
    except SizeMismatch:
        raised = True
    folder = download_dir_for(cfg, "d")
    leftovers = [p.name for p in folder.iterdir() if p.name.startswith("cut.pdf")]
    verdict("fetcher", hash_ok and raised and not leftovers,
            f"hash match {hash_ok}, truncated -> SizeMismatch {raised}, leftover files {leftovers}")


def test_formats(tmp_path):
    tsv_ok = all(serialize_ocr_tsv(parse_ocr_tsv((DATA / n).read_text(encoding="utf-8"))) ==
                 (DATA / n).read_text(encoding="utf-8") for n in ("tesseract_page.tsv", "header_only.tsv"))
    tokens_ok = len(parse_ocr_tsv((DATA / "tesseract_page.tsv").read_text(encoding="utf-8"))) == 11
    x = np.random.default_rng(0).random((2, 1, 64, 64))
    weights_ok = True
    for arch in ARCHS:
        m = build_model(arch, 64, "tiny", seed=3)
        m.forward(x, train=True)
        back = load_weights(save_weights(m, tmp_path / f"{arch}.tndr"))
        weights_ok &= back.forward(x).tobytes() == m.forward(x).tobytes()
    from tenderscan.imagecore import BBox
    from tenderscan.pipeline.manifest import NoticeRecord

    man = Manifest(config_hash="h", records=[NoticeRecord("s", "d", 1, BBox(1, 2, 3, 4), "c.png", 0.5,
                                                          ["tender"], 1, True, "t")])
    manifest_ok = load_manifest(export_manifest(man, tmp_path / "m.json")) == man
    verdict("formats", tsv_ok and tokens_ok and weights_ok and manifest_ok,
            f"TSV golden byte-identical {tsv_ok and tokens_ok}, weights bitwise {weights_ok}, "
            f"manifest round-trip {manifest_ok}")
