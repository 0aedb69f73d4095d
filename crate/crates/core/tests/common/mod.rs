#![allow(dead_code)]

use icpl_core::corpus::{build_eval_instances, sample_contrastive_pairs, ContrastiveSample, EvalInstance};
use icpl_core::egises::{degress_system, scoring_units, MetricConfig, ScoringRecord};
use icpl_core::oracles::{synthetic_corpus, OracleContext, OracleModel, SyntheticCorpus, SyntheticSpec};
use icpl_core::promptforge::{adversarial_perturb, build_prompt_dataset, ForgeConfig, PromptStyle, RenderedPrompt};

pub struct World {
    pub synth: SyntheticCorpus,
    pub instances: Vec<EvalInstance>,
    pub samples: Vec<ContrastiveSample>,
    pub forge: ForgeConfig,
}

pub fn world(seed: u64) -> World {
    world_with(SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    })
}

pub fn world_with(spec: SyntheticSpec) -> World {
    let seed = spec.seed;
    let synth = synthetic_corpus(&spec);
    let instances = build_eval_instances(&synth.corpus, &synth.users).value;
    let samples = sample_contrastive_pairs(&instances, &synth.corpus, seed, 3).value;
    World {
        synth,
        instances,
        samples,
        forge: ForgeConfig::default(),
    }
}

impl World {
    pub fn prompts(&self, styles: &[PromptStyle]) -> Vec<RenderedPrompt> {
        build_prompt_dataset(&self.instances, &self.samples, styles, &self.synth.corpus, &self.forge).records
    }

    pub fn perturbed_prompts(&self, styles: &[PromptStyle], seed: u64) -> Vec<RenderedPrompt> {
        let perturbed: Vec<ContrastiveSample> = self
            .samples
            .iter()
            .map(|s| adversarial_perturb(s, &self.synth.users, seed).unwrap())
            .collect();
        build_prompt_dataset(&[], &perturbed, styles, &self.synth.corpus, &self.forge).records
    }

    /// Run an oracle over prompts and turn its answers into scoring records.
    pub fn oracle_records(&self, model: &OracleModel, prompts: &[RenderedPrompt]) -> Vec<ScoringRecord> {
        let ctx = OracleContext::new(&self.synth.corpus, &self.synth.users, &self.forge.templates);
        let mut out = Vec::new();
        for p in prompts {
            for (slot, user) in p.user_ids.iter().enumerate() {
                out.push(ScoringRecord {
                    model_id: model.model_id(),
                    prompt_style: p.style,
                    doc_id: p.doc_id.clone(),
                    user_id: user.clone(),
                    summary: model.summarize(p, slot, &ctx).unwrap(),
                    group: p.style.is_contrastive().then(|| p.prompt_id.clone()),
                });
            }
        }
        out
    }

    pub fn egises(&self, model: &OracleModel, prompts: &[RenderedPrompt], style: PromptStyle) -> f64 {
        let records = self.oracle_records(model, prompts);
        let units = scoring_units(&self.instances, &records, &model.model_id(), style);
        degress_system(&units, &model.model_id(), style, &MetricConfig::default())
            .unwrap()
            .egises
    }
}
