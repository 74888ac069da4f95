use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use motion_atlas_cli::manifest::CohortManifest;

const BIN: &str = env!("CARGO_BIN_EXE_motion-atlas");

const FAST: &str = r#"{"version":1,"pvira":{"iterations":8,"levels":1},
"atlas":{"outer_iterations":2,"levels":2,"iterations":6,"affine_rounds":2,"affine_iterations":15}}"#;

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).env("RUST_LOG", "warn").output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cohort(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let (code, _, err) = cli(&["phantom", "gen", "--out", s(&data), "--subjects", "3", "--size", "32", "--spacing", "3.5", "--frames", "4", "--noise", "0.02"]);
    assert_eq!(code, 0, "{err}");
    let config = dir.join("config.json");
    std::fs::write(&config, FAST).unwrap();
    (data.join("manifest.json"), config)
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn statuses(stdout: &str) -> BTreeMap<String, String> {
    stdout
        .lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect()
}

#[test]
fn pipeline_is_deterministic_cached_and_isolates_stages() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, config) = cohort(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for run in [&a, &b] {
        let (code, out, err) = cli(&["pipeline", "run", "--manifest", s(&manifest), "--config", s(&config), "--run", s(run)]);
        assert_eq!(code, 0, "{err}");
        assert!(statuses(&out).values().all(|v| v == "done"), "{out}");
    }
    let first = tree(&a);
    assert_eq!(first, tree(&b));
    for rel in ["report/strain_table.csv", "report/pc_loadings.csv", "report/quiver_ə.svg", "report/strain_sub01.svg", "provenance.json"] {
        assert!(first.contains_key(Path::new(rel)), "{rel}");
    }
    let table = String::from_utf8(first[Path::new("report/strain_table.csv")].clone()).unwrap();
    let rows: Vec<&str> = table.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["label", "ə", "s", "u", "k"]);
    let loadings = String::from_utf8(first[Path::new("report/pc_loadings.csv")].clone()).unwrap();
    assert!(loadings.starts_with("label,PC1,PC2,PC3\nə,"));

    let (code, out, _) = cli(&["pipeline", "run", "--manifest", s(&manifest), "--config", s(&config), "--run", s(&a)]);
    assert_eq!(code, 0);
    assert!(statuses(&out).values().all(|v| v == "cached"), "{out}");
    assert_eq!(tree(&a), first);

    std::fs::remove_file(a.join("pca/loadings.csv")).unwrap();
    let (code, out, _) = cli(&["pipeline", "run", "--manifest", s(&manifest), "--config", s(&config), "--run", s(&a)]);
    assert_eq!(code, 0);
    let st = statuses(&out);
    for stage in ["atlas", "harp", "pvira", "transport", "strain"] {
        assert_eq!(st[stage], "cached", "{stage}");
    }
    assert_eq!(st["pca"], "done");
    assert_eq!(tree(&a), first);

    let (code, out, _) = cli(&["report", s(&b)]);
    assert_eq!(code, 0);
    assert!(out.contains("quiver_k.svg"));
    assert_eq!(tree(&b), first);
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, config) = cohort(dir.path());
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut m: CohortManifest = serde_json::from_str(&text).unwrap();

    m.subjects[1].tagged.remove("sagittal");
    let broken = dir.path().join("data/broken.json");
    std::fs::write(&broken, serde_json::to_string(&m).unwrap()).unwrap();
    let (code, _, err) = cli(&["harp", "extract", "--manifest", s(&broken), "--run", s(&dir.path().join("r"))]);
    assert_eq!(code, 2);
    assert!(err.contains("sub02") && err.contains("sagittal"), "{err}");

    let tagged = dir.path().join("data").join(&m.subjects[0].tagged["axial"][0]);
    std::fs::write(&tagged, b"not a volume").unwrap();
    let run = dir.path().join("r");
    let (code, _, err) = cli(&["harp", "extract", "--manifest", s(&manifest), "--config", s(&config), "--run", s(&run)]);
    assert_eq!(code, 3);
    assert!(err.contains("`harp`") && err.contains("axial_0.nii"), "{err}");

    let (code, _, err) = cli(&["transport", "apply", "--manifest", s(&manifest), "--run", s(&run)]);
    assert_eq!(code, 3);
    assert!(err.contains("missing input artifact") && err.contains("region.nii"), "{err}");

    std::fs::create_dir_all(&run).unwrap();
    let (code, _, err) = cli(&["report", s(&run)]);
    assert_eq!(code, 3);
    assert!(err.contains("missing artifacts"), "{err}");
}
