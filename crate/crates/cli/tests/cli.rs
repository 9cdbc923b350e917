use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const WORDS: &[&str] = &[
    "fog", "ledger", "ghost", "chain", "winter", "bell", "candle", "door", "clerk", "fire", "grave", "child",
];

fn semvar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semvar"))
        .current_dir(dir)
        .env_remove("SEMVAR_CACHE")
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = semvar(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn book(dir: &Path, name: &str, n: usize) -> PathBuf {
    let mut text = String::new();
    for s in 0..n {
        let words: Vec<&str> = (0..3 + s % 7).map(|w| WORDS[(s * 7 + w * 3) % WORDS.len()]).collect();
        text.push_str(&format!("The {}. ", words.join(" ")));
    }
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn stage_commands_match_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    book(d, "book.txt", 40);

    let out = ok(d, &["ingest", "book.txt", "--out", "book.sents"]);
    assert!(out.starts_with("book\tsentences=40\t"), "{out}");
    for (name, dim) in [("r8", "8"), ("r24", "24")] {
        ok(d, &["embed", "book.sents", "--provider", &format!("{name}=reference:{dim}"), "--out", &format!("{name}/embeddings.semv")]);
        ok(d, &["ssm", &format!("{name}/embeddings.semv"), "--out", name]);
    }
    ok(d, &["compare", "r8/zssm.semv", "r24/zssm.semv", "--out", "cmp"]);
    ok(d, &["novelty", "r8/zssm.semv", "r24/zssm.semv", "--doc", "book.sents", "--out", "cmp"]);
    ok(d, &["pipeline", "book.txt", "--provider", "r8=reference:8", "--provider", "r24=reference:24", "--out", "run"]);

    let run = d.join("run/docs/book");
    assert_eq!(fs::read(d.join("book.sents")).unwrap(), fs::read(run.join("document.sents")).unwrap());
    for m in ["r8", "r24"] {
        for f in ["embeddings.semv", "ssm.semv", "zssm.semv", "series.csv"] {
            assert_eq!(fs::read(d.join(m).join(f)).unwrap(), fs::read(run.join(m).join(f)).unwrap(), "{m}/{f}");
        }
    }
    for f in ["correlation.csv", "paf.csv", "naf.csv", "ddaf.csv", "novelty.csv", "novelty.json"] {
        assert_eq!(fs::read(d.join("cmp").join(f)).unwrap(), fs::read(run.join(f)).unwrap(), "{f}");
    }

    ok(d, &["render", "heatmap", "r8/zssm.semv", "--out", "h.ppm", "--width", "64", "--height", "64", "--downsample", "16"]);
    assert!(fs::read(d.join("h.ppm")).unwrap().starts_with(b"P6\n64 64\n255\n"));
    ok(d, &["render", "heatmap", "cmp/paf.csv", "--out", "paf.svg", "--palette", "grayscale"]);
    assert!(fs::read_to_string(d.join("paf.svg")).unwrap().contains(">r24</text>"));
    ok(d, &["render", "series", "r8/series.csv", "other=r24/series.csv", "--out", "ts.svg"]);
    assert!(fs::read_to_string(d.join("ts.svg")).unwrap().contains(">other</text>"));

    ok(d, &["compare", "--mean-of", "cmp/correlation.csv", "run/docs/book/correlation.csv", "--out", "mean.csv"]);
    let mean = fs::read_to_string(d.join("mean.csv")).unwrap();
    assert!(mean.starts_with("correlation,<mean>\n"), "{mean}");
}

#[test]
fn pipeline_config_overrides_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    book(d, "a.txt", 30);
    book(d, "b.txt", 35);
    fs::write(d.join("empty.txt"), "   \n").unwrap();
    fs::write(
        d.join("run.toml"),
        r#"documents = ["a.txt", "b.txt"]
cache_dir = "from-config"

[[providers]]
name = "r8"
kind = "reference"
dim = 8

[[providers]]
name = "r16"
kind = "reference"
dim = 16

[render]
width = 96
height = 96
downsample = 16
formats = ["svg"]
"#,
    )
    .unwrap();

    let out = semvar(d, &["pipeline", "--config", "run.toml", "--jobs", "2", "--novelty-q", "0.1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("from-config/docs/a/novelty.json").is_file());
    assert!(!d.join("from-config/docs/a/timeseries.ppm").exists());
    let json = fs::read_to_string(d.join("from-config/docs/a/novelty.json")).unwrap();
    assert!(json.contains("\"q\": 0.1"), "{json}");

    let stderr = String::from_utf8(out.stderr).unwrap();
    for line in stderr.lines() {
        assert_eq!(line.split('\t').count(), 4, "{line:?}");
    }
    assert!(stderr.lines().any(|l| l.starts_with("info\tembed/r16\tb\t")));

    // rerun: all cached
    let stdout = ok(d, &["pipeline", "--config", "run.toml", "--novelty-q", "0.1"]);
    assert!(stdout.lines().last().unwrap().starts_with("# ran=0 "), "{stdout}");

    // environment beats --out
    let cache = d.join("env-cache");
    let out = Command::new(env!("CARGO_BIN_EXE_semvar"))
        .current_dir(d)
        .env("SEMVAR_CACHE", &cache)
        .args(["pipeline", "--config", "run.toml", "--out", "ignored", "empty.txt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "one document fails");
    assert!(cache.join("docs/a/correlation.csv").is_file());
    assert!(!d.join("ignored").exists());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.lines().any(|l| l.starts_with("error\tingest\tempty\t")), "{stderr}");
}

#[test]
fn bad_arguments_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    book(d, "a.txt", 10);
    let out = semvar(d, &["pipeline", "a.txt", "--provider", "nonsense"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error\tcli\t-\t"));
    let out = semvar(d, &["pipeline", "a.txt"]);
    assert_eq!(out.status.code(), Some(1), "no providers");
    let out = semvar(d, &["render", "heatmap", "missing.semv", "--out", "x.svg"]);
    assert_eq!(out.status.code(), Some(1));
}
