"""``emanate`` command line interface."""

from __future__ import annotations

import dataclasses
import logging
import math
from pathlib import Path

import click

from ..dsp import detect_spikes, process_band, stft_spectrogram, usnr
from ..emanation import ActivityPhase
from ..errors import EmanateError, FormatError
from ..scene import capture_pair, default_obfuscation
from .iqio import read_iq, write_iq
from .plan import PROFILES, ExperimentPlan
from .report import build_report
from .runner import SWEEP_KINDS, run_dataset, run_eval, run_sweep, run_train, write_csv, write_run_json
from .serialize import atomic_write, canonical_json, obfuscation_to_dict, scene_to_dict


class _Ctx:
    def __init__(self, config, seed, out, profile):
        self.config, self.seed, self.out_opt, self.profile = config, seed, out, profile
        self._plan = None

    @property
    def plan(self) -> ExperimentPlan:
        if self._plan is None:
            if self.config:
                plan = ExperimentPlan.load(self.config, profile=self.profile)
            else:
                plan = ExperimentPlan.from_profile(self.profile)
            if self.seed is not None:
                plan = plan.with_seed(self.seed)
            self._plan = plan
        return self._plan

    @property
    def out(self) -> Path:
        return Path(self.out_opt) if self.out_opt else Path("runs") / self.plan.name


def _run(fn):
    """Turn package errors into clean CLI failures."""
    try:
        return fn()
    except EmanateError as exc:
        raise click.ClickException(str(exc)) from None


def _floats(text: str | None):
    if not text:
        return None
    return [-math.inf if v.strip() in ("-inf", "off") else float(v) for v in text.split(",")]


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), help="YAML experiment plan.")
@click.option("--seed", type=int, default=None, help="Override the plan seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Run / output directory.")
@click.option("--profile", type=click.Choice(sorted(PROFILES)), default="desk", show_default=True)
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, config, seed, out, profile, verbose):
    """Simulate VR headset EM emanations and evaluate the side-channel pipeline."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = _Ctx(config, seed, out, profile)


@main.command()
@click.pass_obj
def plan(obj: _Ctx):
    """Print the resolved plan as YAML."""
    click.echo(_run(lambda: obj.plan.to_yaml()), nl=False)


@main.command()
@click.option("--app", default=None, help="App id (default: first app of the plan grid).")
@click.option("--phase", type=click.Choice([p.value for p in ActivityPhase]), default="running", show_default=True)
@click.option("--band", "bands", type=float, multiple=True, help="Band center in Hz (repeatable; default all).")
@click.option("--distance", type=float, default=1.0, show_default=True)
@click.option("--orientation", type=float, default=90.0, show_default=True)
@click.option("--duration", type=float, default=None, help="Seconds (default from plan).")
@click.option("--capture-seed", type=int, default=0, show_default=True)
@click.option("--obfuscation-db", type=float, default=None, help="Run the obfuscation daemon at this relative power.")
@click.pass_obj
def synth(obj: _Ctx, app, phase, bands, distance, orientation, duration, capture_seed, obfuscation_db):
    """Write Active and Idle IQ captures (.cf32 + .json sidecar) per band."""

    def go():
        p = obj.plan
        catalog = p.catalog()
        app_id = app or p.doc["grid"]["apps"][0]
        if app_id not in catalog:
            raise FormatError(f"--app: unknown app id {app_id!r}")
        obf = default_obfuscation(obfuscation_db) if obfuscation_db is not None else None
        seed = p.capture_seed(capture_seed)
        for band in bands or p.bands:
            scene = p.scene(catalog[app_id], phase, band, seed, distance, orientation, duration)
            active, idle = capture_pair(scene, obf)
            doc = scene_to_dict(scene)
            stem = obj.out / "iq" / f"{app_id}_{phase}_{band / 1e6:g}MHz_{seed}"
            for state, rec in (("active", active), ("idle", idle)):
                extra = {"state": state, "obfuscation": obfuscation_to_dict(obf)}
                data, _ = write_iq(f"{stem}_{state}", rec, doc, extra)
                click.echo(str(data))

    _run(go)


@main.command()
@click.argument("active", type=click.Path(exists=True, dir_okay=False))
@click.argument("idle", type=click.Path(exists=True, dir_okay=False))
@click.option("--fft-size", type=int, default=None)
@click.option("--avg-frames", type=int, default=None)
@click.option("--movmedian-len", type=int, default=None)
@click.option("--threshold", type=float, default=None, help="Spike threshold in dB.")
@click.option("--stft", is_flag=True, help="Also write the Active spectrogram CSV.")
@click.pass_obj
def process(obj: _Ctx, active, idle, fft_size, avg_frames, movmedian_len, threshold, stft):
    """Residual spectrum, spike list and USNR report for one Active/Idle pair."""

    def go():
        a, _ = read_iq(active)
        i, _ = read_iq(idle)
        if (a.sample_rate, a.center_frequency, len(a)) != (i.sample_rate, i.center_frequency, len(i)):
            raise FormatError(
                f"axis mismatch: {active} is {len(a)} samples at {a.sample_rate:g} Hz around "
                f"{a.center_frequency:g} Hz, {idle} is {len(i)} at {i.sample_rate:g} Hz around {i.center_frequency:g} Hz"
            )
        cfg = obj.plan.pipeline()
        changes = {
            k: v
            for k, v in dict(
                fft_size=fft_size, avg_frames=avg_frames, movmedian_len=movmedian_len, spike_threshold_db=threshold
            ).items()
            if v is not None
        }
        cfg = dataclasses.replace(cfg, **changes)
        if avg_frames is None:
            cfg = dataclasses.replace(cfg, avg_frames=min(cfg.avg_frames, len(a) // cfg.fft_size))
        res = process_band(a, i, cfg)
        spikes = detect_spikes(res, cfg.spike_threshold_db)
        out = obj.out
        atomic_write(out / "residual.csv", res.to_csv())
        reports = [usnr(res, f, cfg.movmedian_len) for f, _ in spikes]
        write_csv(
            out / "spikes.csv",
            ["freq_hz", "power_db", "usnr_db", "floor_db"],
            [[f, p, r.usnr_db, r.floor_db] for (f, p), r in zip(spikes, reports)],
        )
        atomic_write(
            out / "usnr.json",
            canonical_json(
                {
                    "pipeline": dataclasses.asdict(cfg),
                    "spikes": [dataclasses.asdict(r) for r in reports],
                    "n_spikes": len(reports),
                }
            ),
        )
        if stft:
            atomic_write(out / "spectrogram.csv", stft_spectrogram(a, cfg).to_csv())
        click.echo(f"{len(spikes)} spike(s); outputs in {out}")

    _run(go)


@main.command()
@click.option("--force", is_flag=True, help="Rebuild even if a matching store exists.")
@click.pass_obj
def dataset(obj: _Ctx, force):
    """Generate captures, extract features and write the split dataset store."""

    def go():
        m = run_dataset(obj.plan, obj.out, force=force)
        for t, info in m["tasks"].items():
            click.echo(f"{t}: {info['n_examples']} examples, split {info['examples']}")

    _run(go)


@main.command()
@click.pass_obj
def train(obj: _Ctx):
    """Train one classifier per task on the dataset store."""

    def go():
        write_run_json(obj.plan, obj.out)
        for t, hist in run_train(obj.plan, obj.out).items():
            best = next(r for r in hist if r["selected"])
            click.echo(f"{t}: best epoch {best['epoch']} val_accuracy {best['val_accuracy']:.4f}")

    _run(go)


@main.command("eval")
@click.pass_obj
def eval_(obj: _Ctx):
    """Evaluate the trained classifiers on the test split."""

    def go():
        for t, m in run_eval(obj.plan, obj.out).items():
            click.echo(f"{t}: accuracy {m['accuracy']:.4f} on {m['n_test']} test examples")

    _run(go)


@main.command()
@click.argument("kind", type=click.Choice(SWEEP_KINDS))
@click.option("--values", default=None, help="Comma-separated sweep points overriding the plan ('-inf' allowed).")
@click.pass_obj
def sweep(obj: _Ctx, kind, values):
    """Run one sweep study and write sweeps/<kind>.csv."""

    def go():
        vals = _floats(values)
        if kind == "bands" and vals:
            vals = [int(v) for v in vals]
        for row in run_sweep(obj.plan, obj.out, kind, vals):
            click.echo(",".join(str(v) for v in row[:-2]))

    _run(go)


@main.command()
@click.argument("run_dir", required=False, type=click.Path(file_okay=False))
@click.pass_obj
def report(obj: _Ctx, run_dir):
    """Consolidate a finished run into report/bundle.json and report/bundle.csv."""

    def go():
        target = Path(run_dir) if run_dir else obj.out
        b = build_report(target)
        click.echo(f"bundle for {b['plan']['name']} ({b['config_hash']}) written to {target / 'report'}")

    _run(go)


@main.command()
@click.option("--sweeps", "sweep_kinds", default="", help="Comma-separated sweep kinds to include.")
@click.pass_obj
def run(obj: _Ctx, sweep_kinds):
    """dataset, train, eval, optional sweeps, then report."""

    def go():
        p, out = obj.plan, obj.out
        run_dataset(p, out)
        run_train(p, out)
        for t, m in run_eval(p, out).items():
            click.echo(f"{t}: accuracy {m['accuracy']:.4f}")
        for kind in filter(None, (k.strip() for k in sweep_kinds.split(","))):
            if kind not in SWEEP_KINDS:
                raise FormatError(f"--sweeps: unknown kind {kind!r}")
            run_sweep(p, out, kind)
        build_report(out)
        click.echo(f"report written to {out / 'report'}")

    _run(go)


if __name__ == "__main__":  # pragma: no cover
    main()
