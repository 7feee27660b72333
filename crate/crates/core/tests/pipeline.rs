use std::io::Cursor;

use cocolex::decoding::{decode, DecodeInput, Strategy, StrategyConfig};
use cocolex::harness::{
    build_document_index, build_prompt, read_report, retrieve, run_on_instances,
    synthetic_instances, write_report, ExperimentConfig,
};
use cocolex::index::{ContextIndex, Metric};
use cocolex::model::wire::{serve, Op, Request, Response};
use cocolex::model::{
    LanguageModel, ModelStep, PrefillResult, ReferenceModelConfig, ReferenceNgramModel,
};
use cocolex::prob::TokenId;
use cocolex::tokenizer::ByteTokenizer;
use cocolex::Result;

/// A model reached only through encoded request and response frames.
struct WireModel(ReferenceNgramModel);

impl WireModel {
    fn call(&self, op: Op, tokens: &[TokenId]) -> Result<Response> {
        let mut request_bytes = Vec::new();
        Request {
            op,
            tokens: tokens.to_vec(),
        }
        .write_to(&mut request_bytes)?;
        let request = Request::read_from(&mut Cursor::new(request_bytes))?;
        let mut response_bytes = Vec::new();
        serve(&self.0, &request)?.write_to(&mut response_bytes)?;
        Response::read_from(&mut Cursor::new(response_bytes))
    }
}

impl LanguageModel for WireModel {
    fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }

    fn hidden_dim(&self) -> usize {
        self.0.hidden_dim()
    }

    fn prefill(&self, tokens: &[TokenId]) -> Result<PrefillResult> {
        self.call(Op::Prefill, tokens)?.into_prefill()
    }

    fn step(&self, prefix: &[TokenId]) -> Result<ModelStep> {
        self.call(Op::Step, prefix)?.into_step()
    }
}

fn reference() -> ReferenceNgramModel {
    ReferenceNgramModel::new(ReferenceModelConfig::default()).unwrap()
}

#[test]
fn decoding_through_the_wire_matches_direct_calls() {
    let config = ExperimentConfig::default();
    let wire = WireModel(reference());
    for instance in synthetic_instances(17, 3) {
        let passages = retrieve(&instance, &config).unwrap();
        let refs: Vec<_> = passages.iter().collect();
        let prompt = build_prompt(&ByteTokenizer, &instance.query, &refs, 32_768).unwrap();
        for strategy in [
            Strategy::Regular,
            Strategy::Cocolex,
            Strategy::AdacadCocolex,
        ] {
            let cfg = StrategyConfig {
                max_new_tokens: 12,
                ..StrategyConfig::new(strategy)
            };
            let direct = decode(&wire.0, &DecodeInput::new(&prompt), &cfg).unwrap();
            let remote = decode(&wire, &DecodeInput::new(&prompt), &cfg).unwrap();
            assert_eq!(direct.tokens, remote.tokens, "{strategy}");
        }
    }
}

#[test]
fn saved_document_index_decodes_identically() {
    let model = reference();
    let instance = synthetic_instances(21, 1).remove(0);
    let index = build_document_index(
        &model,
        &ByteTokenizer,
        &instance.documents,
        128,
        64,
        Metric::Cosine,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("doc.idx");
    index.save(&path).unwrap();
    let loaded = ContextIndex::load(&path, Metric::Cosine).unwrap();
    assert_eq!(loaded, index);

    let prompt = build_prompt(&ByteTokenizer, &instance.query, &[], 4096).unwrap();
    let cfg = StrategyConfig {
        max_new_tokens: 16,
        metric: Metric::Cosine,
        ..StrategyConfig::new(Strategy::CocolexPlus)
    };
    let a = decode(
        &model,
        &DecodeInput::new(&prompt).with_document_index(&index),
        &cfg,
    )
    .unwrap();
    let b = decode(
        &model,
        &DecodeInput::new(&prompt).with_document_index(&loaded),
        &cfg,
    )
    .unwrap();
    assert_eq!(a.tokens, b.tokens);
    assert_eq!(a.index_entries, index.len());
}

#[test]
fn every_instance_appears_once_per_strategy() {
    let instances = synthetic_instances(33, 6);
    let config = ExperimentConfig {
        strategies: vec![Strategy::Regular, Strategy::Cad, Strategy::CocolexPlus],
        workers: 3,
        ..ExperimentConfig::default()
    };
    let report = run_on_instances(&config, &instances).unwrap();
    for inst in &instances {
        for s in &config.strategies {
            let n = report
                .per_instance
                .iter()
                .filter(|r| r.instance_id == inst.id && r.strategy == s.name())
                .count();
            assert_eq!(n, 1);
        }
    }
    for row in &report.per_instance {
        assert!((0.0..=1.0).contains(&row.rouge_l_f1));
        assert!((0.0..=1.0).contains(&row.context_coverage));
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    write_report(&report, &path).unwrap();
    assert_eq!(read_report(&path).unwrap(), report);
}

#[test]
fn errors_carry_the_instance_id() {
    let instances = synthetic_instances(2, 2);
    let config = ExperimentConfig {
        prompt_budget: 10,
        ..ExperimentConfig::default()
    };
    let err = run_on_instances(&config, &instances).unwrap_err();
    assert!(err.to_string().contains("syn-0000"), "{err}");
    assert!(err.is_data_error());
}
