import math

import numpy as np
import pytest

from losray.cli import EXIT_CONFIG, EXIT_GEOMETRY, EXIT_PARSE, main
from losray.em import C0
from losray.scene import load_scene, read_grid
from losray.synth import parse_ray_text


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture
def scene_file(tmp_path):
    assert run("generate", "--n-buildings", 5, "--grid", 48, "--seed", 3, "--layout", "urban",
               "--out", tmp_path / "g") == 0
    return tmp_path / "g" / "scene.txt"


def test_generate_empty_and_deterministic(tmp_path):
    assert run("generate", "--n-buildings", 0, "--grid", 32, "--out", tmp_path / "e") == 0
    assert load_scene(tmp_path / "e" / "scene.txt").buildings == ()
    for d in ("a", "b"):
        assert run("generate", "--n-buildings", 50, "--seed", 7, "--out", tmp_path / d) == 0
    a = (tmp_path / "a" / "scene.txt").read_bytes()
    assert a == (tmp_path / "b" / "scene.txt").read_bytes()
    assert len(load_scene(tmp_path / "a" / "scene.txt").buildings) == 50


def test_los_outputs(scene_file, tmp_path):
    assert run("los", "--scene", scene_file, "--tx", 2.0, 2.0, "--out", tmp_path / "l", "--noise", 2) == 0
    report = dict(ln.split("=") for ln in (tmp_path / "l" / "los_report.txt").read_text().split())
    assert float(report["iou"]) >= 0.99
    exact = read_grid(tmp_path / "l" / "los_exact.txt")
    assert exact.shape == (48, 48)


def test_error_codes(scene_file, tmp_path):
    assert run("los", "--scene", tmp_path / "missing.txt", "--tx", 1, 1) == EXIT_CONFIG
    bad = tmp_path / "bad.txt"
    bad.write_text("not a scene\n")
    assert run("los", "--scene", bad, "--tx", 1, 1, "--out", tmp_path) == EXIT_PARSE
    s = load_scene(scene_file)
    inside = tuple(np.mean(s.buildings[0].footprint, axis=0))
    assert run("los", "--scene", scene_file, "--tx", *inside, "--out", tmp_path) == EXIT_GEOMETRY
    assert run("los", "--scene", scene_file, "--tx", 1, 1, "--flip", 2) == EXIT_CONFIG
    assert run("frobnicate") == EXIT_CONFIG


def test_trace_free_space_friis(tmp_path):
    run("generate", "--n-buildings", 0, "--grid", 24, "--out", tmp_path)
    out = tmp_path / "t"
    assert run("trace", "--scene", tmp_path / "scene.txt", "--tx", 0.5, 0.5, "--out", out, "--stride", 5) == 0
    rss = read_grid(out / "rss.txt", float)
    lam = C0 / 3.5e9
    for i in range(0, 24, 5):
        for j in range(0, 24, 5):
            d = math.hypot(j, i)
            if d > 0:
                assert rss[i, j] == pytest.approx(20 * math.log10(lam / (4 * math.pi * d)), abs=0.1)


def test_trace_switches_and_beams(scene_file, tmp_path):
    out = tmp_path / "t"
    assert run("trace", "--scene", scene_file, "--tx", 2.0, 2.0, "--out", out, "--stride", 6,
               "--no-reflection", "--no-diffraction", "--beamwidths", 15, 30, 60, "--probe", 3.0, 3.0) == 0
    s = load_scene(scene_file)
    for rays in parse_ray_text((out / "rays.txt").read_text(), s, (2.0, 2.0, 1.5), 1.5).values():
        assert all(r.interaction_kinds == () for r in rays)
        assert len(rays) <= 1
    assert sorted(p.name for p in out.glob("rss_bw*.txt")) == ["rss_bw15.txt", "rss_bw30.txt", "rss_bw60.txt"]
    assert (out / "aps_3_3.csv").exists() and (out / "pdp_3_3.csv").exists()


def test_all_commands_deterministic(scene_file, tmp_path):
    def all_outputs(tag):
        o = tmp_path / tag
        common = ("--scene", scene_file, "--tx", 2.0, 2.0, "--seed", 4)
        assert run("generate", "--n-buildings", 6, "--grid", 40, "--seed", 4, "--layout", "urban", "--out", o / "gen") == 0
        assert run("los", *common, "--noise", 2, "--flip", 0.05, "--out", o / "los") == 0
        assert run("trace", *common, "--stride", 8, "--max-depth", 2, "--probe", 3.0, 3.0,
                   "--beamwidths", 30, "--out", o / "trace") == 0
        rays = o / "trace" / "rays.txt"
        assert run("retarget", *common, "--rays", rays, "--frequency", 28e9, "--out", o / "ret") == 0
        assert run("mimo", *common, "--rays", rays, "--out", o / "mimo") == 0
        assert run("bench", "--sizes", 40, 80, "--grid", 48, "--repeats", 1, "--out", o / "bench") == 0
        files = {}
        for p in sorted(o.rglob("*")):
            if p.is_file():
                data = p.read_bytes()
                if p.name == "bench.csv":
                    # keep only the non-timing columns
                    data = b"\n".join(b",".join(ln.split(b",")[:4]) for ln in data.splitlines())
                if p.name == "bench_summary.txt":
                    data = b"\n".join(ln for ln in data.splitlines() if b"M_over_m" in ln)
                files[str(p.relative_to(o))] = data
        return files

    a = all_outputs("a")
    b = all_outputs("b")
    assert a.keys() == b.keys() and len(a) >= 15
    for k in a:
        assert a[k] == b[k], k
