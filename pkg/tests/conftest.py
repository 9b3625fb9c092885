from pathlib import Path

import pytest

from oscmine.synthetic import demo_spec_dict, generate_recording, spec_from_dict, write_synthetic

# 2 t0 x 24 bands x 4 ranks x 4 folds = 768 configurations, enough to select > 100
SMOKE_SWEEP = dict(t0_values=[-1.0, -0.5], n_bands=24, f0_range=[7.0, 28.0], df_range=[2.0, 4.0],
                   max_rank=4, n_alphas=1, alpha_range=[1e-4, 1e-4], n_folds=4)
# small enough that clustering is skipped (fewer than 100 selected)
TINY_SWEEP = dict(t0_values=[-1.0], n_bands=4, f0_range=[8.0, 24.0], df_range=[3.0, 4.0],
                  max_rank=3, n_alphas=1, alpha_range=[1e-4, 1e-4], n_folds=3)


def write_inputs(directory: Path, n_sources=2, n_trials=100, n_channels=32, seed=0) -> dict:
    d = demo_spec_dict()
    d["sources"] = d["sources"][:n_sources]
    d.update(n_trials=n_trials, n_channels=n_channels)
    recording, gt = generate_recording(spec_from_dict(d, seed=seed))
    return write_synthetic(recording, gt, Path(directory) / "rec")


def toml_value(v) -> str:
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(toml_value(x) for x in v) + "]"
    return repr(v)


def write_config(path: Path, recording: str, target: str, output: str, **params) -> Path:
    lines = ["[input]", f"recording = {toml_value(recording)}", f"target = {toml_value(target)}",
             "", "[output]", f"directory = {toml_value(output)}", "", "[sweep]"]
    lines += [f"{k} = {toml_value(v)}" for k, v in params.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="session")
def tiny_inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny")
    return d, write_inputs(d, n_trials=60, n_channels=16)


ACCEPTANCE: dict[int, str] = {}


def report_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
