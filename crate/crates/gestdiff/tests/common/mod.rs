#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gestdiff::config::RunConfig;
use gestdiff_core::rng::seeded;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub struct Fixture {
    pub root: PathBuf,
    pub trials: BTreeMap<String, Vec<usize>>,
}

fn table(dim: usize, keys: &[String], rng: &mut gestdiff_core::rng::Rng) -> String {
    let mut out = String::from("key");
    for i in 0..dim {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for k in keys {
        out.push_str(k);
        for _ in 0..dim {
            let v: f64 = StandardNormal.sample(rng);
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Hand-rolled JIGSAWS-style corpus: `Suturing_<S>00<n>.txt` transcripts with
/// irregular frame spans, a mapping file and feature tables keyed by trial,
/// task and surgeon.
pub fn jigsaws_fixture(root: &Path, surgeons: &[&str], trials_per_surgeon: usize, segments: std::ops::Range<usize>, dims: (usize, usize, usize), seed: u64) -> Fixture {
    let mut rng = seeded(seed, 0);
    let tdir = root.join("transcripts");
    fs::create_dir_all(&tdir).unwrap();
    let mut trials = BTreeMap::new();
    let mut mapping = String::from("trial_id,surgeon_id,mean_grs\n");
    for (si, s) in surgeons.iter().enumerate() {
        for n in 1..=trials_per_surgeon {
            let id = format!("Suturing_{s}{n:03}");
            let len = rng.random_range(segments.clone());
            let mut frame = rng.random_range(1..100u64);
            let mut text = String::new();
            let mut tokens = Vec::new();
            for _ in 0..len {
                let g = rng.random_range(0..15usize);
                let span = rng.random_range(20..400u64);
                text.push_str(&format!("{frame} {} G{}\n", frame + span, g + 1));
                frame += span + 1;
                tokens.push(g);
            }
            fs::write(tdir.join(format!("{id}.txt")), text).unwrap();
            mapping.push_str(&format!("{id},{s},{}\n", 10 + 3 * si));
            trials.insert(id, tokens);
        }
    }
    fs::write(root.join("mapping.csv"), mapping).unwrap();
    let trial_keys: Vec<String> = trials.keys().cloned().collect();
    let surgeon_keys: Vec<String> = surgeons.iter().map(|s| s.to_string()).collect();
    fs::write(root.join("vision.csv"), table(dims.0, &trial_keys, &mut rng)).unwrap();
    fs::write(root.join("language.csv"), table(dims.1, &["Suturing".to_string()], &mut rng)).unwrap();
    fs::write(root.join("surgeon_id.csv"), table(dims.2, &surgeon_keys, &mut rng)).unwrap();
    fs::write(root.join("surgeon_grs.csv"), table(dims.2, &surgeon_keys, &mut rng)).unwrap();
    Fixture {
        root: root.to_path_buf(),
        trials,
    }
}

/// Config text pointing at a fixture.
pub fn fixture_config(f: &Fixture, out: &Path, dims: (usize, usize, usize)) -> RunConfig {
    let text = format!(
        "data.transcripts={}\ndata.mapping={}\ndata.vision={}\ndata.language={}\ndata.surgeon_id_vectors={}\ndata.surgeon_grs_vectors={}\noutput.dir={}\nconditioning.vision_dim={}\nconditioning.language_dim={}\nconditioning.surgeon_dim={}\n",
        f.root.join("transcripts").display(),
        f.root.join("mapping.csv").display(),
        f.root.join("vision.csv").display(),
        f.root.join("language.csv").display(),
        f.root.join("surgeon_id.csv").display(),
        f.root.join("surgeon_grs.csv").display(),
        out.display(),
        dims.0,
        dims.1,
        dims.2
    );
    RunConfig::parse(&text, Path::new("/")).unwrap()
}

/// A small, fast model for pipeline tests.
pub fn small(config: RunConfig) -> RunConfig {
    [
        ("model.hidden", "32"),
        ("model.heads", "2"),
        ("model.ffw", "64"),
        ("train.epochs", "3"),
        ("eval.repeats", "2"),
        ("attack.iterations", "300"),
    ]
    .iter()
    .fold(config, |c, (k, v)| c.with(k, v).unwrap())
}

/// Every file under `dir` with its bytes.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}
