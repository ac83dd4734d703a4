"""Smoke test for the pycamsim extension.

Run after `cargo build -p pycamsim` (or `maturin develop` in crates/python):

    python3 python/smoke_test.py
"""

import importlib.machinery
import importlib.util
import json
import pathlib
import sys
import tempfile

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_pycamsim():
    try:
        import pycamsim

        return pycamsim
    except ImportError:
        pass
    for profile in ("debug", "release"):
        for name in ("libpycamsim.so", "libpycamsim.dylib", "pycamsim.dll"):
            lib = ROOT / "target" / profile / name
            if lib.exists():
                loader = importlib.machinery.ExtensionFileLoader("pycamsim", str(lib))
                spec = importlib.util.spec_from_loader("pycamsim", loader)
                module = importlib.util.module_from_spec(spec)
                loader.exec_module(module)
                sys.modules["pycamsim"] = module
                return module
    sys.exit("pycamsim not found; run `cargo build -p pycamsim` first")


def main():
    pc = load_pycamsim()
    print("pycamsim", pc.__version__)

    grid = pc.WavelengthGrid(400.0, 700.0, 8)
    assert grid.n_bands == 8

    lens = pc.Lens.load("builtin:thin_biconvex", grid)
    efl, bfd = lens.paraxial_focus(550.0)
    assert abs(efl - 100.0) / 100.0 < 0.01, efl
    print(f"thin_biconvex: efl {efl:.2f} mm, bfd {bfd:.2f} mm")

    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        config = json.loads((ROOT / "configs" / "pipeline.json").read_text())
        config["asset_store"] = str(ROOT / "assets")
        config["output_dir"] = str(tmp / "out")
        config["sensor"]["specs"] = [str(ROOT / "configs" / "sensors" / "fine_3um.json")]
        config["assemble"]["count"] = 1
        cfg_path = tmp / "config.json"
        cfg_path.write_text(json.dumps(config))

        reports = pc.run_pipeline(str(cfg_path), "all", jobs=2)
        assert [r["stage"] for r in reports] == ["assemble", "render", "sensor", "evaluate"]
        assert all(r["ok"] for r in reports), reports

        recipe = tmp / "out" / "recipes" / "scene_0000.json"
        img, stats = pc.render(str(recipe), spp=4, grid=grid, seed=7)
        assert stats["camera_samples"] == img.width * img.height * 4
        cube = np.frombuffer(img.data(), dtype="<f4").reshape(img.shape)
        assert np.isfinite(cube).all() and cube.mean() > 0.0
        assert np.allclose(cube[:, 3, 5], img.pixel(5, 3))
        print(f"render: {img!r}, mean irradiance {cube.mean():.3e}")

        on_disk = pc.SpectralImage.read(str(tmp / "out" / "render" / "scene_0000.spim"))
        assert on_disk.has_metadata and on_disk.shape == img.shape

        spec = pc.SensorSpec.load(str(ROOT / "configs" / "sensors" / "fine_3um.json"))
        raw = pc.simulate_sensor(img, spec)
        assert (raw.rows, raw.cols) == (spec.rows, spec.cols)
        assert max(raw.dn) < 2 ** raw.adc_bits
        assert set(raw.filter_map()) <= {"R", "G", "B", "C", "W", "M"}
        print(f"sensor: {raw!r}, mean DN {np.mean(raw.dn):.1f}")
        assert sorted(pc.SensorSpec.bundled_names()) == ["sensorA", "sensorB"]

        gts = pc.ground_truth(on_disk, "scene_0000")
        for g in gts:
            assert g["distance"] > 0.0

    gt_text = "a car 0 0 10 10 20\na car 20 0 30 10 45\n"
    det_text = "a car 0 0 10 10 0.9\na car 50 50 60 60 0.8\n"
    ap = pc.ap_by_distance(det_text, gt_text, bin_edges=[0.0, 30.0, 60.0])
    near, far = ap["classes"]["car"]
    assert near["ap"] == 1.0 and far["ap"] == 0.0, ap
    print(f"eval: car AP near {near['ap']}, far {far['ap']}")

    try:
        pc.ap_by_distance("a car 0 0 10\n", gt_text)
    except ValueError as e:
        assert "line 1" in str(e)
    else:
        raise AssertionError("malformed detections accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
