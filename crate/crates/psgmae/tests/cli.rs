use std::path::Path;
use std::process::{Command, Output};

fn psgmae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psgmae"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, subjects: &str, duration: &str) {
    let o = psgmae(&[
        "synth",
        "--out",
        p(dir),
        "--subjects",
        subjects,
        "--duration",
        duration,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn inspect_lists_signals_and_annotations() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1", "120");
    let o = psgmae(&["inspect", "--edf", p(&dir.path().join("SN000-PSG.edf"))]);
    assert!(o.status.success());
    let text = stdout(&o);
    for label in ["EEG Fpz-Cz", "EEG Pz-Oz", "EOG horizontal", "EMG submental"] {
        assert!(text.contains(label), "{text}");
    }
    assert_eq!(text.matches("100 Hz").count(), 4, "{text}");

    let o = psgmae(&[
        "inspect",
        "--edf",
        p(&dir.path().join("SN000-Hypnogram.edf")),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("annotations: 4"), "{}", stdout(&o));
}

#[test]
fn missing_file_exits_2_with_path() {
    let o = psgmae(&["inspect", "--edf", "/nonexistent/x.edf"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/x.edf"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(
        psgmae(&["inspect", "--edf", "a", "--bogus"]).status.code(),
        Some(2)
    );
    assert_eq!(psgmae(&["gradcheck"]).status.code(), Some(2));
    assert_eq!(psgmae(&[]).status.code(), Some(2));
}

#[test]
fn preprocess_counts_epochs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    synth(&raw, "1", "300");
    let args = |out: &Path, targets: &str| {
        psgmae(&[
            "preprocess",
            "--psg",
            p(&raw.join("SN000-PSG.edf")),
            "--hypnogram",
            p(&raw.join("SN000-Hypnogram.edf")),
            "--input-channel",
            "EEG Fpz-Cz",
            "--targets",
            targets,
            "--out",
            p(out),
        ])
    };
    let all = "EOG horizontal,EMG submental,EEG Pz-Oz";
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = args(&a, all);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).starts_with("10 epochs from 1 subject(s)"),
        "{}",
        stdout(&o)
    );
    assert!(stderr(&o).contains("warning"));
    assert!(args(&b, all).status.success());
    let cache = |d: &Path| std::fs::read(d.join("epochs.psgepo")).unwrap();
    assert_eq!(cache(&a), cache(&b));
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );

    let o = args(&dir.path().join("c"), "EOG horizontal,EEG Fpz-Cz");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("EEG Fpz-Cz"), "{}", stderr(&o));
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(&d.join("raw"), "4", "300");
    let mut args: Vec<String> = vec!["preprocess".into()];
    for i in 0..4 {
        args.extend(["--psg".into(), format!("{}/raw/SN00{i}-PSG.edf", p(d))]);
        args.extend([
            "--hypnogram".into(),
            format!("{}/raw/SN00{i}-Hypnogram.edf", p(d)),
        ]);
    }
    args.extend(
        [
            "--input-channel",
            "EEG Fpz-Cz",
            "--targets",
            "EOG horizontal,EMG submental,EEG Pz-Oz",
            "--out",
        ]
        .map(String::from),
    );
    args.push(format!("{}/data", p(d)));
    let o = psgmae(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", stderr(&o));

    let small = "max_epochs = 2\nbatch_size = 8\n[mae]\nembed_dim = 16\nnum_heads = 2\nencoder_layers = 1\n";
    std::fs::write(d.join("eeg.toml"), small).unwrap();
    std::fs::write(
        d.join("eog.toml"),
        format!(
            "input_channel = \"EOG horizontal\"\n{}target_channels = [\"EEG Fpz-Cz\", \"EMG submental\", \"EEG Pz-Oz\"]\n",
            small.replace("max_epochs = 2\n", "max_epochs = 1\n")
        ),
    )
    .unwrap();
    for m in ["eeg", "eog"] {
        let cfg = d.join(format!("{m}.toml"));
        let out = d.join(m);
        let o = psgmae(&[
            "train",
            "--config",
            p(&cfg),
            "--data",
            p(&d.join("data")),
            "--out",
            p(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(out.join("best.ckpt").exists() && out.join("last.ckpt").exists());
    }
    let metrics = std::fs::read_to_string(d.join("eeg/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let o = psgmae(&[
        "eval",
        "--checkpoint",
        p(&d.join("eeg/best.ckpt")),
        "--checkpoint",
        p(&d.join("eog/best.ckpt")),
        "--data",
        p(&d.join("data")),
        "--out",
        p(&d.join("report")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(d.join("report/mse_table.txt")).unwrap();
    assert_eq!(text.lines().count(), 8, "{text}");
    let csv = std::fs::read_to_string(d.join("report/mse_table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 12));

    let o = psgmae(&[
        "reconstruct",
        "--checkpoint",
        p(&d.join("eeg/best.ckpt")),
        "--data",
        p(&d.join("data")),
        "--epoch-index",
        "3",
        "--subject",
        "SN001",
        "--out",
        p(&d.join("one.csv")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(d.join("one.csv"))
            .unwrap()
            .lines()
            .count(),
        9001
    );

    let o = psgmae(&[
        "reconstruct",
        "--checkpoint",
        p(&d.join("eeg/best.ckpt")),
        "--data",
        p(&d.join("data")),
        "--epoch-index",
        "100000",
        "--out",
        p(&d.join("none.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let o = psgmae(&["gradcheck", "--tiny"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("f64 max relative error"));
}
