import io
import json
import math

import numpy as np
import pytest

from obdk.checkpoint import (CheckpointError, load_checkpoint, load_series, read_state,
                             save_checkpoint, write_state)
from obdk.cli import main
from obdk.config import ConfigError, parse_config, parse_length, parse_times
from obdk.reports import read_csv_columns, write_csv
from obdk.spectral import GridError, ModelParams, create_grid, random_state


@pytest.fixture(scope="module", params=[(2, 32, 2 * math.pi), (3, 8, 3.0)], ids=["2d", "3d"])
def state(request):
    g = create_grid(*request.param)
    s = random_state(g, np.random.default_rng(1))
    return s.with_fields(s.u_hat, s.tau_hat, 0.375)


def _params(st):
    return ModelParams(nu1=0.5, nu2=2.0, eta=1.5, q_slip=0.25, dim=st.dim)


class TestCheckpoint:
    def test_round_trip_bitwise(self, state, tmp_path):
        path = save_checkpoint(tmp_path / "a.obdk", state, _params(state))
        back, params = load_checkpoint(path)
        assert back.u_hat.tobytes() == state.u_hat.tobytes()
        assert back.tau_hat.tobytes() == state.tau_hat.tobytes()
        assert back.time == state.time and params == _params(state)

    def test_series(self, state, tmp_path):
        seq = [state.with_fields(state.u_hat * k, state.tau_hat, float(k)) for k in range(3)]
        path = save_checkpoint(tmp_path / "s.obdk", seq, _params(state))
        back, _ = load_series(path)
        assert [s.time for s in back] == [0.0, 1.0, 2.0]
        assert np.array_equal(back[2].u_hat, seq[2].u_hat)

    @pytest.mark.parametrize("cut", [10, 200])
    def test_truncated(self, state, tmp_path, cut):
        buf = io.BytesIO()
        write_state(buf, state, _params(state))
        with pytest.raises(CheckpointError, match="missing"):
            read_state(io.BytesIO(buf.getvalue()[:cut]))

    def test_version_mismatch(self, state):
        buf = io.BytesIO()
        write_state(buf, state, _params(state))
        raw = bytearray(buf.getvalue())
        raw[4:8] = (99).to_bytes(4, "little")
        with pytest.raises(CheckpointError, match="found 99, expected 1"):
            read_state(io.BytesIO(bytes(raw)))

    def test_bad_magic(self, state):
        buf = io.BytesIO()
        write_state(buf, state, _params(state))
        with pytest.raises(CheckpointError, match="magic"):
            read_state(io.BytesIO(b"XXXX" + buf.getvalue()[4:]))

    def test_cross_grid(self, state, tmp_path):
        path = save_checkpoint(tmp_path / "g.obdk", state, _params(state))
        other = create_grid(state.dim, state.grid.n * 2, state.grid.box_length)
        with pytest.raises(GridError, match="grid mismatch"):
            load_checkpoint(path, other)


class TestConfig:
    def test_defaults(self):
        rc = parse_config()
        assert rc.grid_d == 2 and rc.seed is None and rc.window == (1.0, 10.0)

    @pytest.mark.parametrize("text,msg", [
        ("[grid]\nd = 2\n[params]\np = 4\n[experiment]\nsigma1 = -1", "p=4 with d=2 excluded"),
        ("[params]\nq_slip = 1.5", r"\[-1, 1\]"),
        ("[grid]\nfoo = 1", "unknown key 'foo'"),
        ("[mystery]\na = 1", r"unknown section \[mystery\]"),
        ("[solver]\nscheme = euler", "scheme"),
        ("[experiment]\nwindow = 5, 1", "window"),
        ("[experiment]\nsigma_list = 2", "outside"),
        ("[experiment]\nsigma1 = 0.5", "sigma1"),
    ])
    def test_rejections(self, text, msg):
        with pytest.raises(ConfigError, match=msg):
            parse_config("<test>", text)

    def test_length_and_times(self):
        assert parse_length("64*pi") == pytest.approx(64 * math.pi)
        assert parse_length("pi") == pytest.approx(math.pi)
        assert parse_times("geom:1:100:3").tolist() == pytest.approx([1, 10, 100])
        assert parse_times("0, 0.5, 1").tolist() == [0, 0.5, 1]

    def test_seed_override_changes_digest(self):
        rc = parse_config("<t>", "[run]\nseed = 1")
        rc2 = rc.with_seed(2)
        assert rc2.seed == 2 and rc2.profile.seed == 2 and rc2.digest() != rc.digest()

    def test_missing_seed(self):
        with pytest.raises(ConfigError, match="seed"):
            parse_config().require_seed()


def test_csv_round_trip(tmp_path):
    p = write_csv(tmp_path / "x.csv", ["t", "v"], [(0.1, 1 / 3), (0.2, 2 / 3)])
    cols = read_csv_columns(p)
    assert cols["v"][0] == 1 / 3


class TestCommands:
    def _cfg(self, tmp_path, text):
        p = tmp_path / "c.ini"
        p.write_text(text)
        return str(p)

    def test_verify(self, tmp_path, capsys):
        cfg = self._cfg(tmp_path, "[run]\nseed = 3\n")
        assert main(["verify", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        assert "33/33 rows pass" in capsys.readouterr().out
        man = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert man["exit_status"] == 0 and man["seed"] == 3

    def test_verify_needs_seed(self, tmp_path):
        cfg = self._cfg(tmp_path, "[grid]\nd = 2\n")
        assert main(["verify", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_bad_config_exit(self, tmp_path, capsys):
        cfg = self._cfg(tmp_path, "[params]\nq_slip = 2\n")
        assert main(["verify", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "[-1, 1]" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["verify", "--config", str(tmp_path / "none.ini")]) == 2

    def test_besov_single_band(self, tmp_path):
        g = create_grid(2, 32, 2 * math.pi * 4)
        x, y = g.coords()
        from obdk.spectral import FlowState, ntri, to_spectral
        u = to_spectral(g, np.stack([np.cos(5 * g.k_min * y), 0 * x]))
        st = FlowState(g, 0.0, u, np.zeros((ntri(2),) + g.spec_shape, complex))
        ck = save_checkpoint(tmp_path / "b.obdk", st, ModelParams(dim=2))
        cfg = self._cfg(tmp_path, f"[besov]\ncheckpoint = {ck}\nfield = u\ns = 1\n")
        assert main(["besov", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        rep = json.loads((tmp_path / "o" / "besov.json").read_text())
        top = max(b["norm"] for b in rep["bands"])
        nonzero = [b for b in rep["bands"] if b["norm"] > 1e-12 * top]
        assert len(nonzero) == 1
        k = nonzero[0]["k"]
        assert rep["value"] == pytest.approx(2.0 ** k * nonzero[0]["norm"], rel=1e-12)

    def test_sharpness_steep_exit_zero(self, tmp_path):
        cfg = self._cfg(tmp_path, "[grid]\nd = 3\n[experiment]\nsigma1 = -1.5\nclass = steep\n"
                        "sigma_list = -1, 0\nwindow = 10, 1e4\n[output]\nformats = csv, json\n")
        assert main(["sharpness", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        rep = json.loads((tmp_path / "o" / "sharpness.json").read_text())
        assert rep["verdicts"]["sigma=0"]["lower bound"] == "FAIL (expected for non-member)"

    def test_linear_parallel_matches_serial(self, tmp_path):
        cfg = self._cfg(tmp_path, "[grid]\nd = 3\n[experiment]\nsigma1 = -1.5\n"
                        "sigma_list = -1, 0, 1\nwindow = 10, 1e4\n[output]\nformats = csv\n")
        assert main(["linear-decay", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
        assert main(["linear-decay", "--config", cfg, "--out", str(tmp_path / "b"),
                     "--workers", "3"]) == 0
        for s in ("-1", "0", "1"):
            a = (tmp_path / "a" / f"linear_sigma{s}.csv").read_bytes()
            assert a == (tmp_path / "b" / f"linear_sigma{s}.csv").read_bytes()
