use std::collections::HashSet;
use std::sync::Arc;

use chrono::Utc;
use parrot::advisor::{extract_json_object, parse_reply};
use parrot::catalog::{Catalog, MatchQuality};
use parrot::embedding::{cosine, EmbeddingVector, LocalEmbedder};
use parrot::pipeline::EvalReport;
use parrot::records::{prompt_view_capped, CrawlRecord, HeaderList, Label, RecordId, UserProfile, TRUNCATION_MARKER};
use parrot::retrieval::{candidate_score, mmr_select, CaseStore, CategoryVectors, MmrCandidate, RetrievalParams};
use proptest::prelude::*;

fn unit(dims: usize) -> impl Strategy<Value = EmbeddingVector> {
    prop::collection::vec(-3i8..=3, dims).prop_map(|v| EmbeddingVector::normalized(v.into_iter().map(f64::from).collect()))
}

fn category_vectors(dims: usize) -> impl Strategy<Value = CategoryVectors> {
    (unit(dims), unit(dims), unit(dims), unit(dims)).prop_map(|(domain, network, html, full)| CategoryVectors {
        domain,
        network,
        html,
        full,
    })
}

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-z]{1,6}", 0..12)
}

fn blank_record(id: RecordId) -> CrawlRecord {
    CrawlRecord {
        id,
        url: format!("http://p{id}.test/"),
        fetched_at: Utc::now(),
        domain: Default::default(),
        network: Default::default(),
        html: Default::default(),
        environment: Default::default(),
        label: Label::Unlabeled,
    }
}

proptest! {
    #[test]
    fn local_embeddings_have_unit_norm(text in "\\PC{0,200}", dims in 8usize..300) {
        let v = LocalEmbedder::new(dims).embed_text(&text);
        prop_assert_eq!(v.dims(), dims);
        prop_assert!((v.norm() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(a in unit(6), b in unit(6)) {
        let ab = cosine(&a, &b).unwrap();
        let ba = cosine(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((cosine(&a, &a).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn unigram_buckets_ignore_token_order(tokens in words(), seed in any::<u64>()) {
        let mut shuffled = tokens.clone();
        // Deterministic rotation plus reversal covers arbitrary reorderings well enough.
        if !shuffled.is_empty() {
            let n = shuffled.len();
            shuffled.rotate_left((seed as usize) % n);
            if seed % 2 == 0 {
                shuffled.reverse();
            }
        }
        let e = LocalEmbedder::unigrams_only(64);
        prop_assert_eq!(e.embed_text(&tokens.join(" ")), e.embed_text(&shuffled.join(" ")));
    }

    #[test]
    fn mmr_returns_distinct_candidates_in_prefix_order(
        vectors in prop::collection::vec(unit(4), 0..10),
        query in unit(4),
        k in 0usize..12,
        lambda in 0.0f64..=1.0,
    ) {
        let cands: Vec<MmrCandidate> = vectors.iter().enumerate().map(|(i, v)| MmrCandidate { id: 10 + i as RecordId, vector: v }).collect();
        let picked = mmr_select(&query, &cands, k, lambda).unwrap();
        prop_assert_eq!(picked.len(), k.min(cands.len()));
        prop_assert_eq!(picked.iter().collect::<HashSet<_>>().len(), picked.len());
        let all = mmr_select(&query, &cands, cands.len(), lambda).unwrap();
        prop_assert_eq!(&all[..picked.len()], &picked[..]);
        // The first pick is always a most relevant candidate.
        if let Some(first) = picked.first() {
            let best = vectors.iter().map(|v| cosine(v, &query).unwrap()).fold(f64::NEG_INFINITY, f64::max);
            let chosen = cosine(&vectors[(*first - 10) as usize], &query).unwrap();
            prop_assert_eq!(chosen, best);
        }
    }

    #[test]
    fn retrieval_respects_threshold_label_and_k(
        entries in prop::collection::vec((category_vectors(4), any::<bool>()), 0..10),
        query in category_vectors(4),
        threshold in -1.0f64..=1.0,
        per_label_k in 1usize..6,
    ) {
        let store = CaseStore::in_memory(Arc::new(LocalEmbedder::new(4)));
        for (i, (v, success)) in entries.iter().enumerate() {
            let mut r = blank_record(i as RecordId + 1);
            r.label = if *success { Label::Success } else { Label::Failed };
            store.insert_precomputed(r, v.clone()).unwrap();
        }
        let params = RetrievalParams { threshold, lambda: 0.7, per_label_k };
        let got = store.retrieve_with_vectors(&query, &params).unwrap();
        for (cases, want) in [(&got.successes, true), (&got.failures, false)] {
            prop_assert!(cases.len() <= per_label_k);
            let eligible = entries.iter().filter(|(v, s)| *s == want && candidate_score(&query, v).unwrap() >= threshold).count();
            prop_assert_eq!(cases.len(), eligible.min(per_label_k));
            for c in cases.iter() {
                let (v, success) = &entries[c.record_id as usize - 1];
                prop_assert_eq!(*success, want);
                prop_assert!(c.score >= threshold);
                prop_assert_eq!(c.score, candidate_score(&query, v).unwrap());
            }
        }
        // Raising the threshold never admits new candidates.
        let stricter = RetrievalParams { threshold: (threshold + 0.2).min(1.0), ..params };
        for label in [Label::Success, Label::Failed] {
            let loose: HashSet<RecordId> = store.threshold_candidates(&query, label, &params).unwrap().iter().map(|(e, _)| e.record_id).collect();
            let strict: HashSet<RecordId> = store.threshold_candidates(&query, label, &stricter).unwrap().iter().map(|(e, _)| e.record_id).collect();
            prop_assert!(strict.is_subset(&loose));
        }
    }

    #[test]
    fn any_profile_maps_to_a_catalog_entry(
        ua in "\\PC{0,80}",
        location in "\\PC{0,20}",
        network in "\\PC{0,20}",
    ) {
        let catalog = Catalog::builtin();
        let mut http_header = HeaderList::new();
        http_header.set("User-Agent", ua);
        let profile = UserProfile { http_header, ip_location: location, network_provider: network };
        let (entry, quality) = catalog.match_profile(&profile);
        // The Standard entry carries a headless UA and sits outside the grid.
        if quality == MatchQuality::Fallback {
            prop_assert_eq!(entry, catalog.standard_entry());
        } else {
            prop_assert!(catalog.entries().contains(&entry));
        }
    }

    #[test]
    fn reply_parsing_never_panics(raw in "\\PC{0,300}") {
        let _ = parse_reply(&raw);
        if let Some(map) = extract_json_object(&raw) {
            // Whatever was extracted is itself a JSON object.
            prop_assert!(serde_json::to_string(&map).is_ok());
        }
    }

    #[test]
    fn prompt_views_stay_within_the_cap(text in "\\PC{0,400}", cap in 16usize..200) {
        let mut r = blank_record(1);
        r.domain.registration.insert("registrar".into(), text);
        let view = prompt_view_capped(&r, cap);
        prop_assert!(view.chars().count() <= cap);
        if view.ends_with(TRUNCATION_MARKER) {
            prop_assert_eq!(view.chars().count(), cap);
        }
    }

    #[test]
    fn metrics_follow_their_definitions(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
        let r = EvalReport::from_counts(tp, fp, tn, fn_);
        let total = tp + fp + tn + fn_;
        prop_assert_eq!(r.accuracy.is_none(), total == 0);
        prop_assert_eq!(r.tpr.is_none(), tp + fn_ == 0);
        prop_assert_eq!(r.tnr.is_none(), tn + fp == 0);
        prop_assert_eq!(r.precision.is_none(), tp + fp == 0);
        for m in [r.accuracy, r.tpr, r.tnr, r.precision, r.f1].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        if let (Some(p), Some(t), Some(f1)) = (r.precision, r.tpr, r.f1) {
            if p + t > 0.0 {
                prop_assert!((f1 - 2.0 * p * t / (p + t)).abs() <= 1e-12);
            }
        }
    }
}
