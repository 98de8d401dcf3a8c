//! Replays the checked-in fuzz corpus with the fuzz targets' assertions, and
//! throws random inputs at the same parsers.

use std::fs;
use std::path::{Path, PathBuf};

use convsplit::problems::image::{encode_pgm, parse_csv_grid, parse_pgm};
use convsplit_cli::config::RunConfig;
use proptest::prelude::*;

fn corpus(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {}", dir.display());
    files
}

fn config_target(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else {
        return false;
    };
    match RunConfig::from_toml(text) {
        Ok(cfg) => {
            let again = RunConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
            assert_eq!(cfg.hash(), again.hash());
            true
        }
        Err(_) => false,
    }
}

fn pgm_target(data: &[u8]) -> bool {
    match parse_pgm(data) {
        Ok(img) => {
            assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
            let back = parse_pgm(&encode_pgm(&img)).unwrap();
            assert_eq!((back.width, back.height), (img.width, img.height));
            true
        }
        Err(_) => false,
    }
}

fn csv_target(data: &[u8]) -> bool {
    match parse_csv_grid(data) {
        Ok(img) => {
            assert_eq!(img.data.len(), img.width * img.height);
            true
        }
        Err(_) => false,
    }
}

fn replay(target: &str, f: fn(&[u8]) -> bool) -> (usize, usize) {
    let files = corpus(target);
    let accepted = files.iter().filter(|p| f(&fs::read(p).unwrap())).count();
    (accepted, files.len() - accepted)
}

#[test]
fn config_seeds() {
    let (ok, rejected) = replay("config_parse", config_target);
    assert!(ok >= 4 && rejected >= 1, "{ok} accepted, {rejected} rejected");
}

#[test]
fn pgm_seeds() {
    let (ok, rejected) = replay("pgm_parse", pgm_target);
    assert!(ok >= 4 && rejected >= 1, "{ok} accepted, {rejected} rejected");
}

#[test]
fn csv_seeds() {
    let (ok, rejected) = replay("csv_grid_parse", csv_target);
    assert!(ok >= 3 && rejected >= 2, "{ok} accepted, {rejected} rejected");
}

fn seed_bytes(target: &str) -> Vec<Vec<u8>> {
    corpus(target).iter().map(|p| fs::read(p).unwrap()).collect()
}

/// A seed with a few bytes overwritten.
fn mutated(seeds: Vec<Vec<u8>>) -> impl Strategy<Value = Vec<u8>> {
    (
        0..seeds.len(),
        prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 0..6),
    )
        .prop_map(move |(i, edits)| {
            let mut s = seeds[i].clone();
            for (at, b) in edits {
                if !s.is_empty() {
                    let k = at.index(s.len());
                    s[k] = b;
                }
            }
            s
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn parsers_never_panic(data in prop::collection::vec(any::<u8>(), 0..256)) {
        config_target(&data);
        pgm_target(&data);
        csv_target(&data);
    }

    #[test]
    fn mutated_pgm_seeds(data in mutated(seed_bytes("pgm_parse"))) {
        pgm_target(&data);
    }

    #[test]
    fn mutated_csv_seeds(data in mutated(seed_bytes("csv_grid_parse"))) {
        csv_target(&data);
    }

    #[test]
    fn mutated_config_seeds(data in mutated(seed_bytes("config_parse"))) {
        config_target(&data);
    }
}
