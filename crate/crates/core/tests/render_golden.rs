//! Byte-level render fixtures. Run with `SEMVAR_BLESS=1` to regenerate.

use std::fs;
use std::path::{Path, PathBuf};

use semvar_core::compare::{MatrixKind, ModelMatrix};
use semvar_core::render::{block_average, render_heatmap, render_timeseries, timeseries_svg, Palette, RenderSpec};
use semvar_core::{ModelId, Ssm, TimeSeries};

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn check(name: &str, produced: &Path) {
    let bytes = fs::read(produced).unwrap();
    let golden = golden_dir().join(name);
    if std::env::var_os("SEMVAR_BLESS").is_some() {
        fs::create_dir_all(golden_dir()).unwrap();
        fs::write(&golden, &bytes).unwrap();
        return;
    }
    let expected = fs::read(&golden).unwrap_or_else(|e| panic!("{}: {e}; bless with SEMVAR_BLESS=1", golden.display()));
    assert!(bytes == expected, "{name} differs from its golden file");
}

fn spec(palette: Palette, title: &str) -> RenderSpec {
    RenderSpec {
        palette,
        width: 96,
        height: 80,
        downsample: 16,
        title: title.to_string(),
    }
}

fn fixed_ssm() -> Ssm {
    #[rustfmt::skip]
    let v = vec![
        1.0, 0.8, 0.1, -0.2,
        0.8, 1.0, 0.3, 0.0,
        0.1, 0.3, 1.0, 0.6,
        -0.2, 0.0, 0.6, 1.0,
    ];
    Ssm::new(ModelId::new("ref").unwrap(), "fixture", 4, v).unwrap()
}

fn fixed_series() -> Vec<TimeSeries> {
    let a: Vec<f32> = (0..24).map(|i| ((i as f32) * 0.7).sin() * 1.5).collect();
    let b: Vec<f32> = (0..24).map(|i| if i % 5 == 0 { -2.0 } else { 0.25 * (i % 3) as f32 }).collect();
    vec![
        TimeSeries { model: ModelId::new("alpha").unwrap(), doc_id: "fixture".into(), values: a },
        TimeSeries { model: ModelId::new("beta").unwrap(), doc_id: "fixture".into(), values: b },
    ]
}

#[test]
fn heatmap_goldens() {
    let dir = tempfile::tempdir().unwrap();
    for (name, palette) in [("heatmap4.svg", Palette::Viridis), ("heatmap4.ppm", Palette::Grayscale)] {
        let out = dir.path().join(name);
        render_heatmap(&fixed_ssm(), &spec(palette, "fixture"), &out).unwrap();
        check(name, &out);
        // same inputs, same bytes
        let again = dir.path().join(format!("again-{name}"));
        render_heatmap(&fixed_ssm(), &spec(palette, "fixture"), &again).unwrap();
        assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
    }

    let models: Vec<ModelId> = ["a", "b", "c", "d"].iter().map(|m| ModelId::new(*m).unwrap()).collect();
    let m = ModelMatrix {
        kind: MatrixKind::Correlation,
        models,
        values: fixed_ssm().values().iter().map(|&v| f64::from(v)).collect(),
        doc_id: "fixture".into(),
    };
    let out = dir.path().join("models4.svg");
    render_heatmap(&m, &spec(Palette::Viridis, ""), &out).unwrap();
    check("models4.svg", &out);
    let svg = fs::read_to_string(&out).unwrap();
    assert_eq!(svg.matches(">a</text>").count(), 2, "row and column label");
}

#[test]
fn timeseries_goldens() {
    let dir = tempfile::tempdir().unwrap();
    for (name, palette) in [("series2.svg", Palette::Viridis), ("series2.ppm", Palette::Grayscale)] {
        let out = dir.path().join(name);
        render_timeseries(&fixed_series(), &spec(palette, "two series"), &out).unwrap();
        check(name, &out);
    }
}

#[test]
fn large_ssm_downsamples_to_requested_cells() {
    let n = 1942;
    let grid = block_average(n, |i, j| if i == j { 1.0 } else { ((i * 31 + j * 17) % 100) as f64 / 100.0 }, 512);
    assert_eq!(grid.cells, 512);
    assert_eq!(grid.values.len(), 512 * 512);
}

#[test]
fn eight_series_stack_into_eight_panels() {
    let series: Vec<TimeSeries> = (0..8)
        .map(|k| TimeSeries {
            model: ModelId::new(format!("m{k}")).unwrap(),
            doc_id: "d".into(),
            values: (0..1941).map(|i| (((i * (k + 3)) % 23) as f32 - 11.0) / 5.0).collect(),
        })
        .collect();
    let svg = timeseries_svg(&series, &RenderSpec::default()).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 8);
    for k in 0..8 {
        assert!(svg.contains(&format!(">m{k}</text>")));
    }
}

#[test]
fn bad_paths_and_empty_inputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(render_heatmap(&fixed_ssm(), &RenderSpec::default(), &dir.path().join("x.png")).is_err());
    assert!(render_heatmap(&fixed_ssm(), &RenderSpec::default(), &dir.path().join("no/such/dir/x.svg")).is_err());
    assert!(render_timeseries(&[], &RenderSpec::default(), &dir.path().join("x.svg")).is_err());
}
