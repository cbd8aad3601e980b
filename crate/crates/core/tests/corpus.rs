mod common;

use std::fs;

use common::*;
use geotopic_core::corpus::{EMBD_HEADER_LEN, EMBD_MAGIC};
use geotopic_core::synthetic::{generate, SynthSpec};
use geotopic_core::{load_corpus, stride_chunks, write_corpus, Corpus, CorpusFormat, Error, GeoCoordinate};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng as _;

fn sample(with_text: bool) -> Corpus {
    let (c, _) = generate(&SynthSpec {
        n: 40,
        d: 7,
        ..SynthSpec::standard()
    })
    .unwrap();
    if with_text {
        c
    } else {
        Corpus::from_parts(
            c.ids().to_vec(),
            c.embeddings().clone(),
            c.coords().to_vec(),
            vec![None; c.len()],
        )
        .unwrap()
    }
}

fn assert_same(a: &Corpus, b: &Corpus) {
    assert_eq!(a.ids(), b.ids());
    assert_eq!(a.embeddings(), b.embeddings());
    assert_eq!(a.coords(), b.coords());
    assert_eq!(a.texts(), b.texts());
}

#[test]
fn embd_round_trip_and_layout() {
    let dir = tempfile::tempdir().unwrap();
    for with_text in [true, false] {
        let c = sample(with_text);
        let path = dir.path().join("c.embd");
        write_corpus(&c, &path, CorpusFormat::Embd).unwrap();
        assert_same(&c, &load_corpus(&path, CorpusFormat::Embd).unwrap());
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], EMBD_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 40);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 7);
        let fixed = EMBD_HEADER_LEN + 40 * 7 * 4 + 40 * 16;
        let trailer = u64::from_le_bytes(bytes[fixed..fixed + 8].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), fixed + 8 + trailer);
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        assert_eq!(first, c.embeddings()[[0, 0]]);
        let lat = f64::from_le_bytes(bytes[12 + 40 * 7 * 4..][..8].try_into().unwrap());
        assert_eq!(lat, c.coords()[0].lat);
    }
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for with_text in [true, false] {
        let c = sample(with_text);
        let path = dir.path().join("c.jsonl");
        write_corpus(&c, &path, CorpusFormat::Jsonl).unwrap();
        assert_same(&c, &load_corpus(&path, CorpusFormat::Jsonl).unwrap());
        let embd = dir.path().join("c.embd");
        write_corpus(&c, &embd, CorpusFormat::Embd).unwrap();
        assert_same(
            &load_corpus(&path, CorpusFormat::Jsonl).unwrap(),
            &load_corpus(&embd, CorpusFormat::Embd).unwrap(),
        );
    }
}

#[test]
fn corrupted_embd_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.embd");
    write_corpus(&sample(true), &path, CorpusFormat::Embd).unwrap();
    let good = fs::read(&path).unwrap();
    let bad = dir.path().join("bad.embd");
    let mut cases: Vec<Vec<u8>> = vec![
        Vec::new(),
        good[..3].to_vec(),
        good[..good.len() / 2].to_vec(),
        good[..good.len() - 1].to_vec(),
        [good.clone(), b"x".to_vec()].concat(),
    ];
    let mut magic = good.clone();
    magic[0] = b'X';
    cases.push(magic);
    let mut trailer = good.clone();
    let last = trailer.len() - 2;
    trailer[last] = b'#';
    cases.push(trailer);
    let mut zero_n = good.clone();
    zero_n[4..8].copy_from_slice(&0u32.to_le_bytes());
    cases.push(zero_n);
    for (i, bytes) in cases.iter().enumerate() {
        fs::write(&bad, bytes).unwrap();
        let err = load_corpus(&bad, CorpusFormat::Embd).unwrap_err();
        assert!(err.is_input_error(), "case {i}: {err}");
    }
}

#[test]
fn jsonl_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let line = |id: &str, lat: f64, emb: &str| format!(r#"{{"id":"{id}","lat":{lat},"lon":1.0,"embedding":{emb}}}"#);
    let cases = [
        (
            format!("{}\n{}", line("a", 1.0, "[1,2]"), line("a", 2.0, "[1,3]")),
            "duplicate",
        ),
        (
            format!("{}\n{}", line("a", 1.0, "[1,2]"), line("b", 2.0, "[1,2,3]")),
            "dimension",
        ),
        (line("a", 91.0, "[1,2]"), "latitude"),
        ("{not json".to_string(), "malformed"),
        (String::new(), "empty"),
    ];
    for (text, what) in cases {
        fs::write(&path, text).unwrap();
        let err = load_corpus(&path, CorpusFormat::Jsonl).unwrap_err();
        assert!(err.is_input_error(), "{what}: {err}");
        if what == "duplicate" {
            assert!(matches!(err, Error::DuplicateId(ref id) if id == "a"));
        }
    }
    let missing = load_corpus(&dir.path().join("missing.jsonl"), CorpusFormat::Jsonl).unwrap_err();
    assert!(missing.to_string().contains("missing.jsonl"));
}

#[test]
fn from_parts_rejects_bad_coordinates_and_zero_rows_are_kept() {
    let ids = vec!["a".to_string(), "b".to_string()];
    let emb = Array2::<f32>::zeros((2, 3));
    let ok = vec![GeoCoordinate { lat: 0.0, lon: 0.0 }; 2];
    assert!(Corpus::from_parts(ids.clone(), emb.clone(), ok, vec![None, None]).is_ok());
    let bad = vec![
        GeoCoordinate { lat: 0.0, lon: 181.0 },
        GeoCoordinate { lat: 0.0, lon: 0.0 },
    ];
    assert!(Corpus::from_parts(ids, emb, bad, vec![None, None]).is_err());
}

#[test]
fn stride_chunks_cover_every_index_exactly_once() {
    for n in 1..=1000 {
        for s in 1..=32.min(n) {
            let plan = stride_chunks(n, s).unwrap();
            assert_eq!(plan.chunks.len(), s);
            let mut seen = vec![false; n];
            for (c, chunk) in plan.chunks.iter().enumerate() {
                assert!(chunk.windows(2).all(|w| w[1] == w[0] + s));
                assert_eq!(chunk.first(), Some(&c));
                for &i in chunk {
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|&v| v), "n={n} s={s}");
            let sizes: Vec<usize> = plan.chunks.iter().map(Vec::len).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
    assert!(stride_chunks(5, 0).is_err());
    assert!(stride_chunks(5, 6).is_err());
}

proptest! {
    #[test]
    fn embd_round_trips_arbitrary_corpora(n in 1usize..30, d in 1usize..12, seed in any::<u64>()) {
        let mut r = geotopic_core::seed::rng(seed, "embd-prop", 0);
        let ids: Vec<String> = (0..n).map(|i| format!("id-{i}-{}", r.random::<u16>())).collect();
        let emb = Array2::from_shape_fn((n, d), |_| r.random_range(-3.0f32..3.0));
        let coords: Vec<GeoCoordinate> =
            (0..n).map(|_| GeoCoordinate { lat: r.random_range(-90.0..=90.0), lon: r.random_range(-180.0..=180.0) }).collect();
        let texts: Vec<Option<String>> = (0..n).map(|i| (i % 3 != 0).then(|| format!("héllo \"{i}\"\n"))).collect();
        let c = Corpus::from_parts(ids, emb, coords, texts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.embd");
        write_corpus(&c, &path, CorpusFormat::Embd).unwrap();
        let back = load_corpus(&path, CorpusFormat::Embd).unwrap();
        prop_assert_eq!(back.ids(), c.ids());
        prop_assert_eq!(back.embeddings(), c.embeddings());
        prop_assert_eq!(back.coords(), c.coords());
        prop_assert_eq!(back.texts(), c.texts());
    }
}

#[test]
fn random_embeddings_survive_jsonl_as_f32() {
    let mut r = rng("jsonl-f32");
    let emb = Array2::from_shape_fn((10, 4), |_| r.random_range(-1.0f32..1.0) * 1e-3);
    let ids = (0..10).map(|i| format!("p{i}")).collect();
    let coords = vec![GeoCoordinate { lat: 1.0, lon: 2.0 }; 10];
    let c = Corpus::from_parts(ids, emb, coords, vec![None; 10]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    write_corpus(&c, &path, CorpusFormat::Jsonl).unwrap();
    assert_eq!(
        load_corpus(&path, CorpusFormat::Jsonl).unwrap().embeddings(),
        c.embeddings()
    );
}
