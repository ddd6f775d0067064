import json
import os

import pytest

from edgefarm.synthdata import (
    CLIP_BOUNDS,
    NEED_HEADER,
    NEED_WEIGHTS,
    WATER_HEADER,
    CsvFormatError,
    DatasetRow,
    GeneratorConfig,
    dataset_stats,
    generate,
    label_need,
    label_water_ml,
    read_csv,
    split,
    write_csv,
)

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

# Target marginal statistics the generator is matched against.
TARGET_MEANS = {"soil_adc": 2674.98, "light_lux": 2494.81, "ph": 7.50, "temp_c": 27.24, "hum_pct": 54.57}
TARGET_STDS = {"soil_adc": 896.25, "light_lux": 1440.73, "ph": 2.63, "temp_c": 4.08, "hum_pct": 19.10}


@pytest.fixture(scope="module")
def seed7_rows():
    return generate(GeneratorConfig(n_rows=30001, seed=7))


@pytest.fixture(scope="module")
def seed7_stats(seed7_rows):
    return dataset_stats(seed7_rows)


class TestGenerate:
    def test_marginal_means_within_2pct(self, seed7_stats):
        for ch, target in TARGET_MEANS.items():
            assert abs(seed7_stats[ch]["mean"] - target) <= 0.02 * target, ch

    def test_marginal_stds_within_5pct(self, seed7_stats):
        for ch, target in TARGET_STDS.items():
            assert abs(seed7_stats[ch]["std"] - target) <= 0.05 * target, ch

    def test_exact_min_max_bounds(self, seed7_stats):
        keymap = {"soil_adc": "soil_adc", "light_lux": "light_lux", "ph": "ph",
                  "temp_c": "temp_c", "hum_pct": "hum_pct"}
        for ch, (lo, hi) in CLIP_BOUNDS.items():
            assert seed7_stats[keymap[ch]]["min"] == lo, ch
            assert seed7_stats[keymap[ch]]["max"] == hi, ch

    def test_temp_hum_correlation(self, seed7_stats):
        assert -0.47 <= seed7_stats["corr_temp_hum"] <= -0.37

    def test_ph_median_exceeds_mean(self, seed7_stats):
        assert seed7_stats["ph"]["median"] > seed7_stats["ph"]["mean"]

    def test_single_row_within_bounds(self):
        (row,) = generate(GeneratorConfig(n_rows=1, seed=3))
        assert CLIP_BOUNDS["soil_adc"][0] <= row.soil_adc <= CLIP_BOUNDS["soil_adc"][1]
        assert CLIP_BOUNDS["temp_c"][0] <= row.temp_c <= CLIP_BOUNDS["temp_c"][1]
        assert CLIP_BOUNDS["hum_pct"][0] <= row.hum_pct <= CLIP_BOUNDS["hum_pct"][1]
        assert CLIP_BOUNDS["ph"][0] <= row.ph <= CLIP_BOUNDS["ph"][1]
        assert CLIP_BOUNDS["light_lux"][0] <= row.light_lux <= CLIP_BOUNDS["light_lux"][1]
        assert 0.0 <= row.need <= 1.0
        assert row.water_ml >= 0.0

    def test_determinism(self):
        cfg = GeneratorConfig(n_rows=200, seed=99)
        a, b = generate(cfg), generate(cfg)
        assert a == b

    def test_need_zone_shape(self, seed7_stats):
        z = seed7_stats["need"]
        assert z["zone_medium"] > 0.5
        assert z["zone_low"] < 0.15
        assert z["zone_high"] < 0.15

    def test_need_stats_match_committed_fixture(self, seed7_stats):
        with open(os.path.join(FIXTURES, "need_label_stats.json")) as f:
            fx = json.load(f)
        assert tuple(fx["weights"]) == NEED_WEIGHTS
        assert seed7_stats["need"]["mean"] == pytest.approx(fx["measured"]["mean"], abs=1e-9)
        assert seed7_stats["need"]["std"] == pytest.approx(fx["measured"]["sd"], abs=1e-9)
        lo, hi = fx["targets"]["mean_band"]
        assert lo <= seed7_stats["need"]["mean"] <= hi
        lo, hi = fx["targets"]["sd_band"]
        assert lo <= seed7_stats["need"]["std"] <= hi

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            GeneratorConfig(n_rows=0)
        with pytest.raises(ValueError):
            GeneratorConfig(temp_hum_rho=1.0)
        with pytest.raises(ValueError):
            GeneratorConfig(noise_sd=-0.1)

    def test_config_json_roundtrip(self):
        cfg = GeneratorConfig(n_rows=17, seed=5, temp_hum_rho=-0.4, noise_sd=0.02)
        doc = cfg.to_json()
        assert json.loads(doc)["schema_version"] == 1
        assert GeneratorConfig.from_json(doc) == cfg

    def test_unknown_schema_version_rejected(self):
        with pytest.raises(ValueError):
            GeneratorConfig.from_json('{"schema_version": 2}')


class TestLabels:
    def test_hot_dry_bright_row_is_high_need(self):
        # alkaline pH from the dominant generator mode
        row = DatasetRow(soil_adc=4095, light_lux=5000, ph=9.3, temp_c=35, hum_pct=20)
        assert label_need(row) > 0.6

    def test_saturated_benign_row_is_low_need(self):
        row = DatasetRow(soil_adc=501, light_lux=800, ph=6.5, temp_c=22, hum_pct=75)
        assert label_need(row) < 0.3

    def test_zero_weights_zero_noise_gives_zero(self):
        row = DatasetRow(soil_adc=3000, light_lux=2000, ph=8.0, temp_c=30, hum_pct=40)
        assert label_need(row, weights=(0, 0, 0, 0, 0), noise=0.0) == 0.0

    def test_water_zero_below_optimal(self):
        assert label_water_ml(DatasetRow(940.0, 4876.0, 7.0, 29.0, 42.0)) == 0.0
        assert label_water_ml(DatasetRow(2500.0, 100.0, 7.0, 25.0, 50.0)) == 0.0

    def test_water_magnitude_band_for_dry_hot_row(self):
        row = DatasetRow(soil_adc=3312, light_lux=2300, ph=7.0, temp_c=33, hum_pct=31)
        assert 200.0 <= label_water_ml(row) <= 400.0

    def test_water_increasing_in_deficit(self):
        base = dict(light_lux=2000, ph=7.0, temp_c=28, hum_pct=50)
        vals = [label_water_ml(DatasetRow(soil_adc=s, **base)) for s in (2600, 2900, 3300, 3900)]
        assert vals == sorted(vals)
        assert vals[0] > 0

    def test_water_noise_is_multiplicative_and_bounded(self):
        row = DatasetRow(soil_adc=3312, light_lux=2300, ph=7.0, temp_c=33, hum_pct=31)
        base = label_water_ml(row)
        assert label_water_ml(row, noise=0.02) == pytest.approx(base * 1.02)
        assert label_water_ml(row, noise=-0.02) == pytest.approx(base * 0.98)


class TestSplit:
    def test_30001_gives_24001_train(self):
        rows = list(range(30001))
        train, test = split(rows, 0.8, seed=1)
        assert len(train) == 24001 and len(test) == 6000

    def test_union_and_disjoint(self):
        rows = list(range(500))
        train, test = split(rows, 0.8, seed=2)
        assert sorted(train + test) == rows
        assert not set(train) & set(test)

    def test_single_row(self):
        train, test = split([42], 0.8, seed=0)
        assert train == [42] and test == []

    def test_same_seed_identical(self):
        rows = list(range(100))
        assert split(rows, 0.7, seed=9) == split(rows, 0.7, seed=9)

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            split([1], 0.0)
        with pytest.raises(ValueError):
            split([1], 1.0)

    def test_empty_rows(self):
        with pytest.raises(ValueError):
            split([], 0.8)


class TestCsv:
    def test_roundtrip_need(self, tmp_path):
        rows = generate(GeneratorConfig(n_rows=100, seed=21))
        p = tmp_path / "need.csv"
        write_csv(p, rows, "need")
        back, task = read_csv(p)
        assert task == "need"
        for orig, rt in zip(rows, back):
            assert rt.soil_adc == orig.soil_adc
            assert rt.light_lux == orig.light_lux
            assert rt.ph == orig.ph
            assert rt.temp_c == orig.temp_c
            assert rt.hum_pct == orig.hum_pct
            assert rt.need == orig.need

    def test_roundtrip_water(self, tmp_path):
        rows = generate(GeneratorConfig(n_rows=50, seed=22))
        p = tmp_path / "water.csv"
        write_csv(p, rows, "water")
        back, task = read_csv(p)
        assert task == "water"
        for orig, rt in zip(rows, back):
            assert rt.water_ml == orig.water_ml
            assert rt.ph is None

    def test_byte_identical_output_for_same_config(self, tmp_path):
        cfg = GeneratorConfig(n_rows=300, seed=5)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(p1, generate(cfg), "need")
        write_csv(p2, generate(cfg), "need")
        assert p1.read_bytes() == p2.read_bytes()

    def test_headers_are_canonical(self, tmp_path):
        rows = generate(GeneratorConfig(n_rows=2, seed=1))
        p = tmp_path / "w.csv"
        write_csv(p, rows, "water")
        assert p.read_text().splitlines()[0] == WATER_HEADER
        write_csv(p, rows, "need")
        assert p.read_text().splitlines()[0] == NEED_HEADER

    def test_lf_line_endings(self, tmp_path):
        p = tmp_path / "w.csv"
        write_csv(p, generate(GeneratorConfig(n_rows=3, seed=1)), "water")
        data = p.read_bytes()
        assert b"\r" not in data

    def test_header_only_gives_empty(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text(WATER_HEADER + "\n")
        rows, task = read_csv(p)
        assert rows == [] and task == "water"

    def test_parses_device_log_row_exactly(self, tmp_path):
        p = tmp_path / "row.csv"
        p.write_text(WATER_HEADER + "\n2856.0,1105.0,25.0,66.0,9.128869428584574\n")
        (row,), _ = read_csv(p)
        assert row.soil_adc == 2856.0
        assert row.light_lux == 1105.0
        assert row.temp_c == 25.0
        assert row.hum_pct == 66.0
        assert row.water_ml == 9.128869428584574

    def test_wrong_arity_reports_line_number(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text(WATER_HEADER + "\n1.0,2.0,3.0\n")
        with pytest.raises(CsvFormatError, match="line 2"):
            read_csv(p)

    def test_non_numeric_reports_line_number(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text(WATER_HEADER + "\n1.0,2.0,3.0,4.0,5.0\n1.0,2.0,x,4.0,5.0\n")
        with pytest.raises(CsvFormatError, match="line 3"):
            read_csv(p)

    def test_unknown_header_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b,c\n")
        with pytest.raises(CsvFormatError, match="line 1"):
            read_csv(p)
