use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sera_lab::bundle::{save_bundle, DatasetBundle, TEST, TRAIN};
use sera_lab::experiments::{Experiment, ExperimentConfig, CSV_HEADER};
use sera_lab::generators::{gen_er, gen_features, ErSpec};
use sera_lab::graph::NodeSubset;

fn sweep(toml: &str, out: &Path) -> Vec<Vec<String>> {
    let cfg = ExperimentConfig::from_toml(toml).unwrap();
    Experiment::new(cfg).unwrap().run_sweep(out).unwrap();
    let mut rdr = csv::Reader::from_path(out).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
    rdr.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

fn col(name: &str) -> usize {
    CSV_HEADER.iter().position(|&h| h == name).unwrap()
}

#[test]
fn one_cell_one_seed_gives_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out.csv");
    let rows = sweep("gen = \"er\"\nn = 50\nd = 64\nL = 1\narch = \"linear\"\ninit = \"identity\"\nseeds = 1\n", &out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][col("status")], "ok");
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 2);
}

#[test]
fn seeds_only_touching_unused_streams_give_identical_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let n = 60;
    let graph = gen_er(ErSpec { n, p: 0.1 }, 1).unwrap();
    let masks = BTreeMap::from([
        (TRAIN.to_string(), NodeSubset::new((0..30).collect(), n).unwrap()),
        (TEST.to_string(), NodeSubset::new((30..n).collect(), n).unwrap()),
    ]);
    let labels = (0..n).map(|v| v % 3).collect();
    let b = DatasetBundle::new(graph, gen_features(n, 16, 2).unwrap(), labels, 3, masks).unwrap();
    save_bundle(&b, tmp.path().join("b")).unwrap();

    let toml = format!(
        "gen = \"bundle\"\nbundle = {:?}\nd = 16\nL = [1, 2]\narch = [\"linear\", \"gcn\", \"max_sage\"]\ninit = \"identity\"\nsigma = 0.0\nseeds = 3\n",
        tmp.path().join("b")
    );
    let rows = sweep(&toml, &tmp.path().join("out.csv"));
    assert_eq!(rows.len(), 6 * 3);
    let varying = [col("seed"), col("ms_elapsed")];
    let strip = |r: &Vec<String>| -> Vec<String> {
        r.iter().enumerate().filter(|(i, _)| !varying.contains(i)).map(|(_, v)| v.clone()).collect()
    };
    for cell in rows.chunks(3) {
        assert_eq!(cell[0][col("status")], "ok", "{:?}", cell[0]);
        assert_eq!(strip(&cell[0]), strip(&cell[1]));
        assert_eq!(strip(&cell[0]), strip(&cell[2]));
    }
}

#[test]
fn reruns_reproduce_the_csv_except_wall_clock() {
    let tmp = tempfile::tempdir().unwrap();
    let toml = "gen = \"sbm\"\nn = 60\nK = 3\np = 0.4\nq = 0.05\nd = [8, 32]\nL = [1, 2]\n\
                arch = [\"gcn\", \"gat\", \"linear\"]\ninit = \"he\"\nsigma = [0.0, 1.0]\nseeds = 2\nthreads = 2\n";
    let a = sweep(toml, &tmp.path().join("a.csv"));
    let b = sweep(toml, &tmp.path().join("b.csv"));
    // 2 d × 2 L × 3 arch × 2 σ cells, each replicated twice; linear with σ > 0 is an error row
    assert_eq!(a.len(), 24 * 2);
    let errors = a.iter().filter(|r| r[col("status")] != "ok").count();
    assert_eq!(errors, 2 * 2 * 2);
    let t = col("ms_elapsed");
    for (x, y) in a.iter().zip(&b) {
        let (mut x, mut y) = (x.clone(), y.clone());
        x[t].clear();
        y[t].clear();
        assert_eq!(x, y);
    }
}

#[test]
fn unwritable_output_is_an_error() {
    let cfg = ExperimentConfig::from_toml("gen = \"er\"\nn = 20\nd = 4\nL = 1\narch = \"gcn\"\nseeds = 1\n").unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("no/such/dir/out.csv");
    assert!(Experiment::new(cfg).unwrap().run_sweep(&out).is_err());
}
