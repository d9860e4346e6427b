"""Operator command-line interface.

Exit codes: 0 success, 1 domain failure (denied scenario under --expect-grant,
validation findings, diverged training), 2 usage or input errors.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import backend as backend_mod
from . import dataset as dataset_mod
from . import faces, gate, loss as loss_mod, metrics, occupancy, plates
from .clock import WallClock
from .imaging import decode_pnm, encode_pnm
from .store import Store, StoreError


def _fail_input(message: str):
    raise click.UsageError(message)


@click.group()
def main():
    """Vehicle entrance and parking management toolkit."""


# ---------------------------------------------------------------------------
# dataset

@main.group()
def dataset():
    """YOLO dataset utilities (validate, split, stats)."""


@dataset.command("validate")
@click.argument("root", type=click.Path(exists=True, file_okay=False, path_type=Path))
def dataset_validate(root: Path):
    report = dataset_mod.validate_dataset(root)
    findings = report.findings()
    for finding in findings:
        click.echo(finding)
    if findings:
        sys.exit(1)
    click.echo("dataset clean")


@dataset.command("split")
@click.argument("root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--ratios", default="0.6,0.2,0.2", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path))
def dataset_split(root: Path, ratios: str, seed: int, out: Path | None):
    try:
        parts = tuple(float(r) for r in ratios.split(","))
        items, class_map = dataset_mod.scan_dataset(root)
        manifest = dataset_mod.split_dataset(items, parts, seed, class_map)
    except (ValueError, FileNotFoundError) as exc:
        _fail_input(str(exc))
    for name in ("train", "val", "test"):
        click.echo(f"{name}: {len(manifest.splits[name])}")
    if out:
        payload = {
            "seed": seed,
            "ratios": list(parts),
            "splits": manifest.splits,
            "class_map": {str(k): v for k, v in manifest.class_map.items()},
            "items": [{"stem": it.stem, "image": str(it.image), "label": str(it.label)}
                      for it in manifest.items],
        }
        out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        click.echo(f"manifest written to {out}")


@dataset.command("stats")
@click.argument("root", type=click.Path(exists=True, file_okay=False, path_type=Path))
def dataset_stats_cmd(root: Path):
    try:
        items, class_map = dataset_mod.scan_dataset(root)
        manifest = dataset_mod.DatasetManifest(items=items, splits={}, class_map=class_map)
        stats = dataset_mod.dataset_stats(manifest)
    except (ValueError, FileNotFoundError, dataset_mod.LabelFormatError) as exc:
        _fail_input(str(exc))
    click.echo(f"items: {stats['total_items']}")
    click.echo(f"records: {stats['total_records']}")
    for name in sorted(stats["per_class"]):
        click.echo(f"class {name}: {stats['per_class'][name]}")


# ---------------------------------------------------------------------------
# eval

def _load_truth_dir(truth: Path) -> dict[str, list[metrics.GroundTruth]]:
    labels_dir = truth / "labels" if (truth / "labels").is_dir() else truth
    truths: dict[str, list[metrics.GroundTruth]] = {}
    for label_file in sorted(labels_dir.rglob("*.txt")):
        records = dataset_mod.load_label_file(label_file)
        image_id = str(label_file.relative_to(labels_dir).with_suffix(""))
        truths[image_id] = [
            metrics.GroundTruth(_norm_pixel_box(rec.bbox), rec.class_id)
            for rec in records
        ]
    return truths


def _norm_pixel_box(bbox: dataset_mod.NormBBox) -> metrics.PixelBox:
    x1, y1, x2, y2 = bbox.corners()
    return metrics.PixelBox(x1, y1, x2, y2)


def _load_predictions(path: Path) -> dict[str, list[metrics.ScoredDetection]]:
    preds: dict[str, list[metrics.ScoredDetection]] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 7:
            _fail_input(f"{path}:{lineno}: expected 7 fields, got {len(fields)}")
        try:
            image_id = fields[0]
            class_id = int(fields[1])
            confidence = float(fields[2])
            bbox = dataset_mod.NormBBox(*(float(v) for v in fields[3:]))
            det = metrics.ScoredDetection(_norm_pixel_box(bbox), class_id, confidence)
        except ValueError as exc:
            _fail_input(f"{path}:{lineno}: {exc}")
        preds.setdefault(image_id, []).append(det)
    return preds


@main.command("eval")
@click.option("--truth", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--preds", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--iou", default=0.5, show_default=True, type=float)
@click.option("--classes", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--format", "fmt", default="table",
              type=click.Choice(["table", "kv"]), show_default=True)
def eval_cmd(truth: Path, preds: Path, iou: float, classes: Path | None, fmt: str):
    """Evaluate predictions against ground-truth labels (Precision/Recall/mAP@50/IOU)."""
    try:
        truth_map = _load_truth_dir(truth)
    except dataset_mod.LabelFormatError as exc:
        _fail_input(str(exc))
    pred_map = _load_predictions(preds)
    report = metrics.evaluate(truth_map, pred_map, iou)
    if classes:
        report.class_names = dataset_mod.load_class_map(classes)
    click.echo(metrics.render_report_table(report) if fmt == "table"
               else metrics.render_report_kv(report))


# ---------------------------------------------------------------------------
# loss / train-toy

@main.command("loss")
@click.option("--pred", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--target", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--weights", default="1,1,1", show_default=True,
              help="loc,obj,cls weight coefficients")
def loss_cmd(pred: Path, target: Path, weights: str):
    """Composite loss breakdown for a prediction/target grid file pair."""
    try:
        w = [float(v) for v in weights.split(",")]
        if len(w) != 3:
            raise ValueError("need exactly three weights")
        lw = loss_mod.LossWeights(*w)
        pred_grid = loss_mod.load_prediction_grid(pred)
        target_grid = loss_mod.load_target_grid(target)
        breakdown = loss_mod.total_loss(pred_grid, target_grid, lw)
    except ValueError as exc:
        _fail_input(str(exc))
    click.echo(f"loc={breakdown.loc:.6f}")
    click.echo(f"obj={breakdown.obj:.6f} (present={breakdown.obj_present:.6f} "
               f"absent={breakdown.obj_absent:.6f})")
    click.echo(f"cls={breakdown.cls:.6f}")
    click.echo(f"total={breakdown.total:.6f}")


@main.command("train-toy")
@click.option("--lr", default=0.01, show_default=True, type=float)
@click.option("--epochs", default=500, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path),
              help="write the per-epoch loss trace as CSV")
def train_toy(lr: float, epochs: int, seed: int, out: Path | None):
    """Run SGD on the built-in synthetic grid set and report the loss descent."""
    dataset = loss_mod.make_toy_dataset(seed=seed)
    model = loss_mod.ToyModel.zeros(n_classes=2, feat_dim=4)
    initial = loss_mod.mean_loss(model, dataset).total
    try:
        trained, trace = loss_mod.toy_train(model, dataset, lr, epochs, seed)
    except loss_mod.TrainingDiverged as exc:
        click.echo(f"diverged: {exc}", err=True)
        sys.exit(1)
    final = trace[-1].total
    click.echo(f"initial={initial:.9f}")
    click.echo(f"final={final:.9f}")
    click.echo(f"ratio={final / initial:.6f}" if initial else "ratio=0")
    if out:
        rows = ["epoch,loc,obj,cls,total"]
        rows += [f"{i + 1},{b.loc:.9f},{b.obj:.9f},{b.cls:.9f},{b.total:.9f}"
                 for i, b in enumerate(trace)]
        out.write_text("\n".join(rows) + "\n")
        click.echo(f"trace written to {out}")


# ---------------------------------------------------------------------------
# lot

@main.group()
def lot():
    """Parking lot occupancy from camera frames."""


def _occupancy_report(state: occupancy.OccupancyState) -> str:
    lines = [f"slot {s.slot_id} {'occupied' if s.occupied else 'free'} {s.fill_ratio:.4f}"
             for s in state.slots]
    occupied = sorted(state.occupied_ids(), key=lambda s: (len(s), s))
    lines.append(f"occupied: {','.join(occupied) if occupied else '-'}")
    return "\n".join(lines)


@lot.command("analyze")
@click.option("--frame", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--slots", "slots_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--render", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--fill-threshold", type=float, default=None,
              help="override the occupied fill-ratio threshold")
def lot_analyze(frame: Path, slots_path: Path, render: Path | None,
                fill_threshold: float | None):
    try:
        slotmap = occupancy.load_slotmap(slots_path)
        img = decode_pnm(frame.read_bytes())
        params = occupancy.OccupancyParams() if fill_threshold is None else \
            occupancy.OccupancyParams(fill_ratio_threshold=fill_threshold)
        state = occupancy.analyze_frame(img, slotmap, params)
    except ValueError as exc:
        _fail_input(str(exc))
    click.echo(_occupancy_report(state))
    if render:
        render.write_bytes(encode_pnm(occupancy.render_overlay(img, state, slotmap)))


@lot.command("watch")
@click.option("--slots", "slots_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--render-dir", type=click.Path(file_okay=False, path_type=Path))
def lot_watch(slots_path: Path, render_dir: Path | None):
    """Read frame paths from stdin, emit one occupancy state line per frame."""
    try:
        slotmap = occupancy.load_slotmap(slots_path)
    except ValueError as exc:
        _fail_input(str(exc))
    if render_dir:
        render_dir.mkdir(parents=True, exist_ok=True)
    for raw in sys.stdin:
        path = Path(raw.strip())
        if not raw.strip():
            continue
        try:
            img = decode_pnm(path.read_bytes())
            state = occupancy.analyze_frame(img, slotmap)
        except (OSError, ValueError) as exc:
            click.echo(f"frame {path}: error {exc}")
            continue
        occupied = sorted(state.occupied_ids(), key=lambda s: (len(s), s))
        ratios = " ".join(f"{s.slot_id}={s.fill_ratio:.4f}" for s in state.slots)
        click.echo(f"frame {path} occupied={','.join(occupied) if occupied else '-'} {ratios}")
        if render_dir:
            out = render_dir / (path.stem + ".overlay.pgm")
            out.write_bytes(encode_pnm(occupancy.render_overlay(img, state, slotmap)))


# ---------------------------------------------------------------------------
# registry

@main.group()
def registry():
    """Vehicle and employee registry maintenance."""


def _open_store(store_dir: Path) -> Store:
    return Store(store_dir)


@registry.command("add-vehicle")
@click.argument("plate")
@click.option("--class", "vclass", default="car", show_default=True)
@click.option("--drivers", default="", help="comma-separated employee ids")
@click.option("--store", "store_dir", required=True,
              type=click.Path(file_okay=False, path_type=Path))
def registry_add_vehicle(plate: str, vclass: str, drivers: str, store_dir: Path):
    try:
        canonical = plates.parse_plate(plates.normalize_plate(plate)).canonical
    except plates.PlateFormatError as exc:
        _fail_input(str(exc))
    store = _open_store(store_dir)
    store.put("vehicles", canonical, {
        "plate": canonical, "class": vclass,
        "drivers": [d for d in drivers.split(",") if d],
    })
    store.close()
    click.echo(f"vehicle {canonical} registered")


@registry.command("add-employee")
@click.argument("employee_id")
@click.argument("name", nargs=-1, required=True)
@click.option("--store", "store_dir", required=True,
              type=click.Path(file_okay=False, path_type=Path))
def registry_add_employee(employee_id: str, name: tuple[str, ...], store_dir: Path):
    store = _open_store(store_dir)
    store.put("employees", employee_id, {"name": " ".join(name)})
    store.close()
    click.echo(f"employee {employee_id} registered")


@registry.command("enroll-face")
@click.argument("employee_id")
@click.argument("embedding_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--store", "store_dir", required=True,
              type=click.Path(file_okay=False, path_type=Path))
@click.option("--dim", type=int, default=None, help="expected embedding dimension")
def registry_enroll_face(employee_id: str, embedding_file: Path, store_dir: Path,
                         dim: int | None):
    store = _open_store(store_dir)
    try:
        emb = faces.load_embedding_file(embedding_file, expected_dim=dim,
                                        source="enrollment")
        faces.enroll(employee_id, emb, store)
    except (ValueError, KeyError) as exc:
        store.close()
        _fail_input(str(exc))
    store.close()
    click.echo(f"enrolled embedding for {employee_id}")


@registry.command("list")
@click.argument("collection")
@click.option("--store", "store_dir", required=True,
              type=click.Path(file_okay=False, path_type=Path))
def registry_list(collection: str, store_dir: Path):
    store = _open_store(store_dir)
    try:
        ids = store.ids(collection)
    except StoreError as exc:
        store.close()
        _fail_input(str(exc))
    for doc_id in ids:
        doc = store.get(collection, doc_id)
        click.echo(f"{doc_id} {json.dumps(doc.fields, sort_keys=True)}")
    store.close()


@registry.command("events")
@click.option("--store", "store_dir", required=True,
              type=click.Path(file_okay=False, path_type=Path))
def registry_events(store_dir: Path):
    store = _open_store(store_dir)
    for doc_id in store.ids("events"):
        fields = store.get("events", doc_id).fields
        parts = [f"[{fields.get('ts', 0):>6}]", fields.get("kind", "?")]
        for key in ("session", "plate", "employee", "slot", "reason", "detail"):
            if key in fields and fields[key] != "":
                parts.append(f"{key}={fields[key]}")
        click.echo(" ".join(str(p) for p in parts))
    store.close()


# ---------------------------------------------------------------------------
# gate

def load_config_file(path: Path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _gate_config(values: dict[str, str]) -> gate.GateConfig:
    def get(key, cast, default):
        return cast(values[key]) if key in values else default

    as_bool = lambda v: v.lower() in ("1", "true", "yes", "on")
    return gate.GateConfig(
        max_plate_attempts=get("gate.max_plate_attempts", int, 3),
        max_face_attempts=get("gate.max_face_attempts", int, 3),
        session_timeout_ms=get("gate.session_timeout_ms", int, 30_000),
        barrier_auto_close_ms=get("gate.barrier_auto_close_ms", int, 10_000),
        verify_threshold=get("gate.verify_threshold", float, faces.DEFAULT_THRESHOLD),
        embed_dim=get("gate.embed_dim", int, faces.DEFAULT_DIM),
        crop_margin=get("gate.crop_margin", float, 0.05),
        binding_required=get("gate.binding_required", as_bool, False),
        backend_timeout_ms=get("backend.timeout_ms", int, 2000),
    )


def _build_endpoint(values: dict[str, str], config: gate.GateConfig, root: Path):
    spec = values.get("backend.endpoint", "reference")
    if spec == "reference":
        ref = backend_mod.ReferenceBackend(backend_mod.ReferenceConfig(
            noise_sigma=float(values.get("backend.sigma", "0")),
            seed=int(values.get("backend.seed", "0")),
            embed_dim=config.embed_dim,
            root=root))
        return backend_mod.InProcessEndpoint(ref)
    if spec.startswith("subprocess:"):
        import shlex

        command = shlex.split(spec.partition(":")[2])
        return backend_mod.LineEndpoint(backend_mod.StdioTransport(command))
    if spec.startswith("tcp:"):
        _, host, port = spec.split(":")
        return backend_mod.LineEndpoint(backend_mod.TcpTransport(host, int(port)))
    raise ValueError(f"unknown backend endpoint spec {spec!r}")


@main.group("gate")
def gate_group():
    """Gate controller: scenario simulation and the live service."""


@gate_group.command("run")
@click.option("--scenario",
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--config", "config_path",
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--barrier-log", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--expect-grant", is_flag=True,
              help="exit 1 unless some session ends Granted or Passed")
@click.option("--live", is_flag=True,
              help="run the live service instead of a scenario")
@click.option("--port", type=int, default=None, help="override service.port (live)")
def gate_run(scenario: Path | None, config_path: Path | None,
             trace_path: Path | None, barrier_log: Path | None,
             expect_grant: bool, live: bool, port: int | None):
    """Drive a scenario on a simulated clock, or serve live events with --live."""
    values = load_config_file(config_path) if config_path else {}
    if live:
        config = _gate_config(values)
        listen_port = port if port is not None else int(values.get("service.port", "7600"))
        store_dir = values.get("store.dir")
        if not store_dir:
            _fail_input("live mode requires store.dir in the config file")
        serve_live(values, config, Path(store_dir), listen_port)
        return
    if scenario is None:
        _fail_input("either --scenario or --live is required")
    try:
        config = _gate_config(values)
        outcome = _run_scenario_with_config(scenario, values, config)
    except (gate.ScenarioError, ValueError) as exc:
        _fail_input(str(exc))
    click.echo(outcome.trace, nl=False)
    if trace_path:
        trace_path.write_text(outcome.trace)
    if barrier_log:
        barrier_log.write_text(outcome.barrier_transcript)
    terminal = {sid: state for sid, state in outcome.terminal_states.items()}
    click.echo("terminal: " + " ".join(f"{sid}={state}"
                                       for sid, state in sorted(terminal.items())))
    if expect_grant and not any(state in ("Granted", "Passed")
                                for state in terminal.values()):
        sys.exit(1)


def _run_scenario_with_config(scenario_path: Path, values: dict[str, str],
                              config: gate.GateConfig) -> gate.ScenarioOutcome:
    import tempfile

    from .backend import FlakyEndpoint
    from .barrier import BarrierClient, BarrierSimulator, LocalSimLink
    from .clock import SimClock

    scenario = gate.parse_scenario(scenario_path.read_text(), source=str(scenario_path))
    root = scenario_path.parent
    store_dir = values.get("store.dir")
    with tempfile.TemporaryDirectory(prefix="parkgate-gate-") as tmp:
        clock = SimClock()
        store = Store(Path(store_dir) if store_dir else Path(tmp) / "store", clock=clock)
        gate.apply_setup(scenario, store)
        endpoint = _build_endpoint(values, config, root)
        if scenario.flaky:
            endpoint = FlakyEndpoint(endpoint, scenario.flaky)
        sim = BarrierSimulator(clock)
        client = BarrierClient(LocalSimLink(sim), clock)
        controller = gate.GateController(config, store, endpoint, client, clock,
                                         frame_root=root, workdir=Path(tmp) / "work")
        Path(tmp, "work").mkdir(exist_ok=True)
        for event in scenario.timeline:
            if event[0] == "arrive":
                controller.handle_arrival(event[1])
            elif event[0] == "tick":
                clock.advance(event[1])
                controller.handle_tick()
            elif event[0] == "pass":
                controller.handle_pass_sensor()
            elif event[0] == "exit":
                controller.handle_exit(event[1])
        outcome = gate.ScenarioOutcome(
            trace="\n".join(controller.trace) + "\n",
            barrier_transcript=("\n".join(client.transcript) + "\n"
                                if client.transcript else ""),
            terminal_states={sid: s.state for sid, s in controller.sessions.items()},
            controller=controller,
        )
        endpoint.close()
        store.close()
    return outcome


def serve_live(values: dict[str, str], config: gate.GateConfig,
               store_dir: Path, port: int, max_events: int | None = None):
    import queue
    import socket
    import socketserver
    import tempfile
    import threading

    from .barrier import BarrierClient, BarrierSimulator, LocalSimLink

    events: "queue.Queue[str]" = queue.Queue()

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                events.put(raw.decode("utf-8", "replace").strip())

    socketserver.ThreadingTCPServer.allow_reuse_address = True
    server = socketserver.ThreadingTCPServer(("127.0.0.1", port), Handler)
    server.daemon_threads = True
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()

    clock = WallClock()
    root = Path(values.get("gate.frame_root", "."))
    with tempfile.TemporaryDirectory(prefix="parkgate-live-") as tmp:
        store = Store(store_dir, clock=clock)
        endpoint = _build_endpoint(values, config, root)
        sim = BarrierSimulator(clock)
        client = BarrierClient(LocalSimLink(sim), clock)
        controller = gate.GateController(config, store, endpoint, client, clock,
                                         frame_root=root, workdir=Path(tmp))
        click.echo(f"listening on 127.0.0.1:{port}")
        seen = 0
        emitted = 0
        try:
            while True:
                try:
                    line = events.get(timeout=0.1)
                except queue.Empty:
                    controller.handle_tick()
                    continue
                fields = line.split()
                if not fields:
                    continue
                if fields[0] == "shutdown":
                    break
                if fields[0] == "arrive" and len(fields) == 2:
                    controller.handle_arrival(fields[1])
                elif fields[0] == "exit" and len(fields) == 2:
                    controller.handle_exit(fields[1])
                elif fields[0] == "pass":
                    controller.handle_pass_sensor()
                else:
                    click.echo(f"ignoring malformed event line: {line!r}")
                controller.handle_tick()
                while emitted < len(controller.trace):
                    click.echo(controller.trace[emitted])
                    emitted += 1
                seen += 1
                if max_events is not None and seen >= max_events:
                    break
        finally:
            server.shutdown()
            endpoint.close()
            store.close()


# ---------------------------------------------------------------------------
# barrier simulator / reference backend (stdio services)

@main.command("barrier-sim")
def barrier_sim():
    """Run the barrier simulator on stdin/stdout (wall clock).

    Protocol lines only; the extra control line "!pass" triggers the
    pass-through sensor.
    """
    from .barrier import BarrierSimulator

    sim = BarrierSimulator(WallClock())
    for raw in sys.stdin:
        line = raw.strip()
        if not line:
            continue
        replies = sim.trigger_pass() if line == "!pass" else sim.handle_line(line)
        for reply in replies:
            sys.stdout.write(reply + "\n")
        sys.stdout.flush()


@main.group("backend")
def backend_group():
    """Inference backend services."""


@backend_group.command("serve-reference")
@click.option("--root", type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="base directory for relative image paths")
@click.option("--sigma", default=0.0, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--embed-dim", default=None, type=int)
@click.option("--tcp", "tcp_port", default=None, type=int,
              help="serve on a TCP port instead of stdio")
def serve_reference(root: Path | None, sigma: float, seed: int,
                    embed_dim: int | None, tcp_port: int | None):
    """Serve the deterministic reference backends over the line protocol."""
    ref = backend_mod.ReferenceBackend(backend_mod.ReferenceConfig(
        noise_sigma=sigma, seed=seed, embed_dim=embed_dim, root=root))
    if tcp_port is None:
        def read_line():
            line = sys.stdin.readline()
            return line if line else None

        def write_line(line: str):
            sys.stdout.write(line + "\n")
            sys.stdout.flush()

        backend_mod.serve_lines(ref, read_line, write_line)
        return

    import socket

    server = socket.create_server(("127.0.0.1", tcp_port))
    click.echo(f"reference backend on 127.0.0.1:{tcp_port}", err=True)
    while True:
        conn, _ = server.accept()
        reader = conn.makefile("r", encoding="utf-8")
        writer = conn.makefile("w", encoding="utf-8")

        def read_line():
            line = reader.readline()
            return line if line else None

        def write_line(line: str):
            writer.write(line + "\n")
            writer.flush()

        try:
            backend_mod.serve_lines(ref, read_line, write_line)
        finally:
            conn.close()


if __name__ == "__main__":
    main()
