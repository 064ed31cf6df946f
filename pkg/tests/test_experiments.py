import json
import math

import pytest

from ztpcp.estimators import EstimatorKind, FitSpec, fit
from ztpcp.experiments import (
    CSV_HEADER,
    PAPER_FRACTIONS,
    ExperimentConfig,
    SweepResult,
    SweepRow,
    check_invariants,
    emit_csv,
    read_csv,
    run_sweep,
    structural_warnings,
)
from ztpcp.generate import generate_truth, sample_counts, sample_omega
from ztpcp.optim import OptimOptions
from ztpcp.sampling import stream
from ztpcp.tensors import ContractError

FAST = OptimOptions(max_iters=60)


def tiny(**kw):
    base = dict(dims=8, rank=2, omega_fractions=(0.3, 1.0), replicates=2, seed=3, optim=FAST)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def sweep():
    return run_sweep(tiny())


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [dict(omega_fractions=()), dict(omega_fractions=(0.5, 0.2)), dict(omega_fractions=(0.0,)),
         dict(omega_fractions=(1.5,)), dict(replicates=0), dict(beta=3.0, alpha=2.0)],
    )
    def test_invalid(self, kw):
        with pytest.raises(ContractError):
            tiny(**kw)

    def test_methods_from_strings_are_ordered(self):
        cfg = tiny(methods=("ztp", "poisson"))
        assert cfg.methods == (EstimatorKind.POISSON, EstimatorKind.ZTP)

    def test_json_roundtrip(self, tmp_path):
        cfg = tiny(methods=("oracle",))
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert ExperimentConfig.from_json(path) == cfg

    def test_paper_scale(self):
        variants = ExperimentConfig().paper_scale()
        assert [c.dims for c in variants] == [50, 100, 200]
        assert all(c.replicates == 50 and c.omega_fractions == PAPER_FRACTIONS for c in variants)
        assert PAPER_FRACTIONS[:6] == (0.01, 0.02, 0.03, 0.04, 0.05, 0.1) and PAPER_FRACTIONS[-1] == 1.0
        assert len(PAPER_FRACTIONS) == 24

    def test_desk_defaults(self):
        cfg = ExperimentConfig()
        assert (cfg.order, cfg.dims, cfg.rank, cfg.replicates) == (3, 100, 5, 5)


class TestSweep:
    def test_one_row_per_method_and_fraction(self, sweep):
        keys = [(r.method, r.omega_fraction) for r in sweep.rows]
        assert len(keys) == len(set(keys)) == 6
        assert [r.method for r in sweep.rows[:2]] == [EstimatorKind.POISSON] * 2

    def test_invariants_hold(self, sweep):
        assert check_invariants(sweep, replicates=2) == []
        assert all(r.mean_rel_error >= 0 for r in sweep.rows)

    def test_full_observation_identity(self, sweep):
        assert abs(sweep.mean("poisson", 1.0) - sweep.mean("oracle", 1.0)) <= 1e-10

    def test_single_replicate(self):
        cfg = tiny(omega_fractions=(0.5,), replicates=1, methods=("ztp",))
        res = run_sweep(cfg)
        (row,) = res.rows
        assert row.std_rel_error == 0.0
        # Rebuild the same replicate by hand.
        truth = generate_truth(cfg.gen_config(), stream(cfg.seed, "truth"))
        omega = sample_omega(cfg.shape, 256, stream(cfg.seed, "omega", 0, 0))
        counts = sample_counts(truth, omega, stream(cfg.seed, "counts", 0, 0))
        init = int(stream(cfg.seed, "init", 0, 0).integers(2**62))
        direct = fit(FitSpec(EstimatorKind.ZTP, 2, init_seed=init, optim=FAST), counts, omega, truth)
        assert row.mean_rel_error == direct.rel_error

    def test_deterministic_csv(self, tmp_path, sweep):
        again = run_sweep(tiny())
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_csv(sweep, a)
        emit_csv(again, b)
        assert a.read_bytes() == b.read_bytes()

    def test_workers_do_not_change_results(self, sweep):
        assert run_sweep(tiny(), workers=2).rows == sweep.rows

    def test_empty_gamma_counted(self):
        # Means far below one with a tiny trusted set leave no nonzero counts.
        cfg = tiny(beta=1e-4, alpha=1e-4, omega_fractions=(1 / 512,), replicates=3, methods=("ztp",))
        (row,) = run_sweep(cfg).rows
        assert row.flagged == 3 and math.isnan(row.mean_rel_error)
        assert check_invariants(SweepResult([row])) == []


class TestInvariantChecks:
    def row(self, method, f, mean, std=0.0):
        return SweepRow(EstimatorKind(method), f, mean, std, 10.0, 0)

    def test_detects_mismatch(self):
        res = SweepResult([self.row("poisson", 1.0, 0.1), self.row("oracle", 1.0, 0.2)])
        assert check_invariants(res)

    def test_detects_negative_and_std(self):
        res = SweepResult([self.row("ztp", 0.5, -0.1, std=0.3)])
        assert len(check_invariants(res, replicates=1)) == 2

    def test_structural_warning(self):
        res = SweepResult([self.row("poisson", 0.1, 0.1), self.row("oracle", 0.1, 0.9)])
        assert structural_warnings(res)
        res = SweepResult([self.row("poisson", 0.1, 0.9), self.row("oracle", 0.1, 0.1)])
        assert not structural_warnings(res)


class TestCSV:
    def test_empty(self, tmp_path):
        path = tmp_path / "r.csv"
        emit_csv(SweepResult(), path)
        assert path.read_text() == ",".join(CSV_HEADER) + "\n"

    def test_single_row(self, tmp_path):
        path = tmp_path / "r.csv"
        emit_csv(SweepResult([SweepRow(EstimatorKind.ZTP, 0.05, 0.123456789012345, 0.0, 12.0, 1)]), path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2 and lines[1] == "ztp,0.05,0.123456789,0,12,1"

    def test_roundtrip(self, tmp_path, sweep):
        path = tmp_path / "r.csv"
        emit_csv(sweep, path)
        back = read_csv(path)
        for a, b in zip(sweep.rows, back.rows):
            assert a.method is b.method and a.flagged == b.flagged
            for name in ("omega_fraction", "mean_rel_error", "std_rel_error", "mean_iterations"):
                assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-9)

    def test_gnuplot_companion(self, tmp_path, sweep):
        emit_csv(sweep, tmp_path / "r.csv")
        script = (tmp_path / "r.gp").read_text()
        assert "'r.csv'" in script and "ztp" in script

    def test_unwritable(self, tmp_path):
        with pytest.raises(OSError, match="missing"):
            emit_csv(SweepResult(), tmp_path / "missing" / "r.csv")
