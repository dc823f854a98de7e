import pytest

# a pipeline small enough to run end to end in a few seconds
TINY = [
    "synth.n_users=4",
    "synth.n_apps=8",
    "synth.n_stations=8",
    "synth.days=3",
    "synth.records_per_user_day=12",
    "clustering.k=3",
    "model.d_app=8",
    "model.d_user=4",
    "model.d_time_unit=3",
    "model.d_model=16",
    "model.num_heads=2",
    "model.d_ff=32",
    "model.n_layers=1",
    "train.epochs=2",
    "train.batch_size=16",
]


@pytest.fixture
def tiny_overrides(tmp_path):
    return TINY + [f'paths.out_dir="{(tmp_path / "run").as_posix()}"']


# criterion id -> (passed, message); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, msg = ACCEPTANCE[cid]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {cid}: {msg}")
