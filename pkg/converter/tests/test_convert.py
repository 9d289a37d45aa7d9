import json
import shutil
import subprocess

import numpy as np
import pytest

from ndec_convert import (
    SourceFormatError,
    central_difference_velocity,
    check_session_invariants,
    convert_session,
    convert_tree,
    read_ndec,
)
from ndec_convert.cli import main

from _fixtures import make_recording


def _segment_count(target_pos):
    changed = np.any(target_pos[:, 1:] != target_pos[:, :-1], axis=0)
    return int(changed.sum()) + 1


class TestConvert:
    def test_indy_like_probe_count(self, indy_like, tmp_path):
        path, meta = indy_like
        out = tmp_path / "indy.ndec"
        manifest = convert_session(path, out)
        assert manifest["n_probes"] == 96
        assert read_ndec(out)["velocity"].shape == (2, 5000)

    def test_loco_like_probe_count(self, loco_like, tmp_path):
        path, _ = loco_like
        manifest = convert_session(path, tmp_path / "loco.ndec")
        assert manifest["n_probes"] == 192

    def test_output_passes_session_invariants(self, indy_like, tmp_path):
        path, _ = indy_like
        out = tmp_path / "s.ndec"
        convert_session(path, out)
        s = read_ndec(out)
        check_session_invariants(s["sample_rate"], s["velocity"],
                                 s["target_pos"], s["spikes"])
        assert s["sample_rate"] == pytest.approx(250.0)
        for st in s["spikes"]:
            assert np.all(np.diff(st) >= 0)

    def test_time_base_shifted_to_zero(self, indy_like, tmp_path):
        path, meta = indy_like
        out = tmp_path / "s.ndec"
        manifest = convert_session(path, out)
        assert manifest["time_offset_s"] == pytest.approx(meta["t0"])
        s = read_ndec(out)
        t_end = (s["velocity"].shape[1] - 1) / s["sample_rate"]
        hi = max(st[-1] for st in s["spikes"] if st.size)
        lo = min(st[0] for st in s["spikes"] if st.size)
        assert -0.2 <= lo and hi <= t_end

    def test_reach_count_preserved(self, indy_like, tmp_path):
        path, meta = indy_like
        out = tmp_path / "s.ndec"
        convert_session(path, out)
        s = read_ndec(out)
        assert _segment_count(s["target_pos"]) == meta["n_reaches"]

    def test_velocity_integrates_back_to_position(self, indy_like, tmp_path):
        path, meta = indy_like
        out = tmp_path / "s.ndec"
        convert_session(path, out)
        s = read_ndec(out)
        rate = s["sample_rate"]
        # the converter took finger_pos rows (1, 2), i.e. (-x, -y)
        pos = np.stack([-meta["position"][0], -meta["position"][1]])
        span = int(10 * rate)
        for axis in range(2):
            v = s["velocity"][axis]
            p = pos[axis]
            scale = np.ptp(p)
            for start in range(0, p.size - span, span // 2):
                seg_v = v[start : start + span + 1]
                drift = np.trapezoid(seg_v, dx=1.0 / rate) - (p[start + span] - p[start])
                assert abs(drift) < 0.01 * scale

    def test_central_difference_exact_on_quadratic(self):
        t = np.arange(100) / 250.0
        pos = np.stack([3 * t ** 2 + 2 * t, -t ** 2])
        v = central_difference_velocity(pos, 250.0)
        # central differences are exact for quadratics (interior points)
        np.testing.assert_allclose(v[0][1:-1], 6 * t[1:-1] + 2, rtol=1e-9)
        np.testing.assert_allclose(v[1][1:-1], -2 * t[1:-1], rtol=1e-9)

    def test_cursor_pos_fallback(self, tmp_path):
        src = tmp_path / "cursor.mat"
        make_recording(src, n_ch=8, T=1000, seed=5, use_cursor_pos=True)
        manifest = convert_session(src, tmp_path / "c.ndec")
        assert manifest["position_source"] == "cursor_pos"

    def test_unsorted_unit_repaired_with_warning(self, tmp_path):
        src = tmp_path / "messy.mat"
        make_recording(src, n_ch=8, T=1000, seed=6, unsorted_unit=True)
        with pytest.warns(UserWarning, match="non-monotone"):
            manifest = convert_session(src, tmp_path / "m.ndec")
        assert manifest["repaired_unit_streams"] == 1
        s = read_ndec(tmp_path / "m.ndec")
        for st in s["spikes"]:
            assert np.all(np.diff(st) >= 0)

    @pytest.mark.parametrize("missing", ["t", "target_pos", "spikes", "finger_pos"])
    def test_missing_groups_reported(self, tmp_path, missing):
        src = tmp_path / f"missing_{missing}.mat"
        make_recording(src, n_ch=8, T=500, seed=7, drop_group=missing)
        with pytest.raises(SourceFormatError, match=missing.split("_")[0]):
            convert_session(src, tmp_path / "x.ndec")


class TestCLI:
    def test_single_file(self, indy_like, tmp_path, capsys):
        path, _ = indy_like
        rc = main([str(path), "--out-dir", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "indy_like_01.ndec").exists()
        assert (tmp_path / "indy_like_01.ndec.json").exists()
        assert "96 probes" in capsys.readouterr().out

    def test_directory(self, tmp_path):
        srcdir = tmp_path / "src"
        srcdir.mkdir()
        for i in range(2):
            make_recording(srcdir / f"f{i}.mat", n_ch=8, T=500, seed=i)
        outdir = tmp_path / "out"
        rc = main([str(srcdir), "--out-dir", str(outdir)])
        assert rc == 0
        assert sorted(p.name for p in outdir.glob("*.ndec")) == ["f0.ndec", "f1.ndec"]

    def test_missing_input_exits_1(self, tmp_path, capsys):
        rc = main([str(tmp_path / "nope.mat"), "--out-dir", str(tmp_path)])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


@pytest.mark.skipif(shutil.which("ndec") is None,
                    reason="primary pipeline CLI not on PATH")
class TestPrimaryInterop:
    """The converted files feed the decoding pipeline through its CLI."""

    def test_segment_reports_expected_reaches(self, indy_like, tmp_path):
        path, meta = indy_like
        out = tmp_path / "interop.ndec"
        convert_session(path, out)
        run_dir = tmp_path / "seg"
        res = subprocess.run(
            ["ndec", "segment", "--session", str(out), "--run-dir", str(run_dir)],
            capture_output=True, text=True,
        )
        assert res.returncode == 0, res.stderr
        report = json.loads((run_dir / "segment.json").read_text())
        assert report["n_reaches"] == meta["n_reaches"]
        assert report["n_probes"] == 96
