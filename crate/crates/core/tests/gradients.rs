mod common;

use std::time::Instant;

use common::{configs, synth, tiny};
use ndcore::{gradient_check_params, ParamStore, Tape64};
use pfuse::corpus::{Signal, TrainingInstance};
use pfuse::fusion::FusionStrategy;
use pfuse::matchers::{Family, Pass};
use pfuse::Model64;

fn instance(family: Family, label: usize, candidates: usize) -> Vec<TrainingInstance> {
    if family.is_recurrent() {
        vec![TrainingInstance::Listwise { candidates, label }]
    } else {
        vec![
            TrainingInstance::Binary { candidate: label, positive: true },
            TrainingInstance::Binary {
                candidate: (label + 1) % candidates,
                positive: false,
            },
        ]
    }
}

#[test]
fn every_family_and_strategy_loss_matches_finite_differences() {
    let start = Instant::now();
    let (vocab, examples) = synth(Signal::Both, 2, 3, 3, 21);
    let batch = &examples[..2];
    for (family, strategy) in configs() {
        let config = tiny(family, strategy);
        let mut store = Model64::init(config.clone(), &vocab, 17).unwrap().store;
        let loss = |tape: &mut Tape64, store: &ParamStore<f64>| {
            let model = Model64::from_store(config.clone(), store.clone()).unwrap();
            let mut terms = Vec::new();
            for ex in batch {
                for inst in instance(family, ex.label, ex.candidates.len()) {
                    terms.push(model.loss(tape, ex, &inst, &mut Pass::eval()).unwrap());
                }
            }
            let mut total = terms[0];
            for &t in &terms[1..] {
                total = tape.add(total, t)?;
            }
            Ok(total)
        };
        let report = gradient_check_params(&mut store, loss, 1e-6, None).unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "{family}-{strategy}: {} at {:?}",
            report.max_rel_error,
            report.worst
        );
        assert!(report.coordinates > 0);
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn context_ablated_and_persona_free_paths_have_gradients() {
    use pfuse::corpus::{PersonaConfig, PersonaSide};
    let cfg = PersonaConfig {
        side: PersonaSide::Own,
        ablate_context: true,
        ..PersonaConfig::default()
    };
    let (vocab, examples) = common::synth_with(Signal::Persona, 2, 3, 3, 22, cfg);
    assert!(examples[0].context.is_empty());
    for family in Family::ALL {
        for strategy in [FusionStrategy::ContextAware, FusionStrategy::ContextResponseAware] {
            let config = tiny(family, strategy);
            let mut store = Model64::init(config.clone(), &vocab, 5).unwrap().store;
            let ex = &examples[0];
            let loss = |tape: &mut Tape64, store: &ParamStore<f64>| {
                let model = Model64::from_store(config.clone(), store.clone()).unwrap();
                Ok(model.loss(tape, ex, &instance(family, ex.label, 3)[0], &mut Pass::eval()).unwrap())
            };
            let report = gradient_check_params(&mut store, loss, 1e-6, Some(6)).unwrap();
            assert!(report.max_rel_error < 1e-4, "{family}-{strategy}: {}", report.max_rel_error);
        }
    }
}
