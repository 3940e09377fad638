//! The `simulate` configuration: keys, defaults, and the echo written as
//! `effective_config`.

use std::fmt::Write as _;

use nfdp_core::datagen::{LabelSpace, PartitionMode, PartitionPlan, PoolDistribution, SyntheticTask};
use nfdp_core::federation::{
    Execution, FederationConfig, LdpComposition, LdpNoise, LdpSettings, PrivacyMode, PublicSubsetPolicy, QueryRule,
    WarmStart,
};
use nfdp_core::learner::KnowledgeMode;
use nfdp_core::{Budget, SamplingScheme};

use crate::config::{ConfigDocument, ConfigError};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSettings {
    pub federation: FederationConfig,
    pub task: SyntheticTask,
    pub plan: PartitionPlan,
    pub charts: bool,
}

fn parse_bool(doc: &mut ConfigDocument, key: &str, default: bool) -> Result<bool, ConfigError> {
    match doc.raw(key).as_deref() {
        None => Ok(default),
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        Some(v) => Err(doc.error(key, format!("expected true or false, found `{v}`"))),
    }
}

fn choice<T: Copy>(doc: &mut ConfigDocument, key: &str, default: T, options: &[(&str, T)]) -> Result<T, ConfigError> {
    let Some(v) = doc.raw(key) else { return Ok(default) };
    options.iter().find(|(name, _)| *name == v).map(|&(_, t)| t).ok_or_else(|| {
        let names: Vec<_> = options.iter().map(|(n, _)| *n).collect();
        doc.error(key, format!("expected one of {}, found `{v}`", names.join("|")))
    })
}

fn name_of<T: PartialEq>(value: T, options: &[(&'static str, T)]) -> &'static str {
    options.iter().find(|(_, t)| *t == value).map(|(n, _)| *n).expect("every value has a name")
}

const SCHEMES: [(&str, SamplingScheme); 2] =
    [("with", SamplingScheme::WithReplacement), ("without", SamplingScheme::WithoutReplacement)];
const MODES: [(&str, KnowledgeMode); 3] = [
    ("logits", KnowledgeMode::Logits),
    ("softmax", KnowledgeMode::Softmax),
    ("argmax", KnowledgeMode::Argmax),
];
const PARTITIONS: [(&str, PartitionMode); 3] = [
    ("iid", PartitionMode::Iid),
    ("subclass", PartitionMode::NonIidSubclass),
    ("shift", PartitionMode::NonIidShift),
];
const LABELS: [(&str, LabelSpace); 2] = [("superclass", LabelSpace::Superclass), ("subclass", LabelSpace::Subclass)];
const POLICIES: [(&str, PublicSubsetPolicy); 2] =
    [("per_round", PublicSubsetPolicy::PerRound), ("fixed", PublicSubsetPolicy::Fixed)];
const RULES: [(&str, QueryRule); 2] = [("per_class", QueryRule::PerClass), ("per_example", QueryRule::PerExample)];
const COMPOSITIONS: [(&str, LdpComposition); 2] =
    [("formula", LdpComposition::Formula), ("basic", LdpComposition::Basic)];

#[derive(Clone, Copy, PartialEq)]
enum Privacy {
    Nfdp,
    Ldp,
    None,
}
const PRIVACY: [(&str, Privacy); 3] = [("nfdp", Privacy::Nfdp), ("ldp", Privacy::Ldp), ("none", Privacy::None)];

#[derive(Clone, Copy, PartialEq)]
enum Pool {
    Matched,
    Shifted,
}
const POOLS: [(&str, Pool); 2] = [("matched", Pool::Matched), ("shifted", Pool::Shifted)];

fn parse_hidden(doc: &mut ConfigDocument) -> Result<Vec<usize>, ConfigError> {
    let Some(v) = doc.raw("layer_dims") else { return Ok(vec![32]) };
    if v == "none" {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|w| match w.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(doc.error("layer_dims", format!("expected positive widths or `none`, found `{v}`"))),
            Ok(n) => Ok(n),
        })
        .collect()
}

impl SimulateSettings {
    /// Reads every key, applying defaults. `seed` overrides the `seed` key.
    pub fn from_document(mut doc: ConfigDocument, seed: Option<u64>) -> Result<Self, ConfigError> {
        let d = FederationConfig::default();
        let task = SyntheticTask {
            features: doc.parsed_or("task_features", 20)?,
            superclasses: doc.parsed_or("task_superclasses", 4)?,
            subclasses_per_super: doc.parsed_or("task_subclasses", 3)?,
            separation: doc.parsed_or("task_separation", 4.0)?,
            noise_sigma: doc.parsed_or("task_noise", 1.0)?,
            label_space: choice(&mut doc, "task_labels", LabelSpace::Superclass, &LABELS)?,
        };
        let parties: usize = doc.parsed_or("parties", d.parties)?;
        let plan = PartitionPlan {
            parties,
            mode: choice(&mut doc, "partition", PartitionMode::NonIidShift, &PARTITIONS)?,
            per_party_n: doc.parsed_or("per_party_n", 300)?,
            shift_strength: doc.parsed_or("shift_strength", 1.0)?,
            test_size: doc.parsed_or("test_size", 1000)?,
        };

        let privacy = match choice(&mut doc, "privacy", Privacy::Nfdp, &PRIVACY)? {
            Privacy::Nfdp => PrivacyMode::Nfdp,
            Privacy::None => PrivacyMode::NonPrivate,
            Privacy::Ldp => {
                let sigma: Option<f64> = doc.parsed("ldp_sigma")?;
                let epsilon: Option<f64> = doc.parsed("ldp_epsilon")?;
                let delta: f64 = doc.required("ldp_delta")?;
                let noise = match (sigma, epsilon) {
                    (Some(_), Some(_)) => return Err(doc.error("ldp_epsilon", "give either ldp_sigma or ldp_epsilon")),
                    (None, None) => return Err(doc.error("ldp_sigma", "privacy=ldp needs ldp_sigma or ldp_epsilon")),
                    (Some(sigma), None) => LdpNoise::Sigma { sigma, delta },
                    (None, Some(eps)) => LdpNoise::Target(
                        Budget::new(eps, delta).map_err(|e| doc.error("ldp_epsilon", e.to_string()))?,
                    ),
                };
                PrivacyMode::FedLdp(LdpSettings {
                    noise,
                    c2: doc.parsed_or("ldp_c2", 1.0)?,
                    query_rule: choice(&mut doc, "ldp_query_rule", QueryRule::PerClass, &RULES)?,
                    composition: choice(&mut doc, "ldp_composition", LdpComposition::Formula, &COMPOSITIONS)?,
                })
            }
        };
        if !matches!(privacy, PrivacyMode::FedLdp(_)) {
            for key in ["ldp_sigma", "ldp_epsilon", "ldp_delta", "ldp_c2", "ldp_query_rule", "ldp_composition"] {
                if doc.contains(key) {
                    return Err(doc.error(key, "only meaningful with privacy=ldp"));
                }
            }
        }

        let pool = choice(&mut doc, "public_pool", Pool::Matched, &POOLS)?;
        let shift: Option<f64> = doc.parsed("public_shift")?;
        let public_distribution = match (pool, shift) {
            (Pool::Matched, None) => PoolDistribution::Matched,
            (Pool::Matched, Some(_)) => return Err(doc.error("public_shift", "needs public_pool=shifted")),
            (Pool::Shifted, s) => PoolDistribution::Shifted(s.unwrap_or(1.0)),
        };

        let warm = parse_bool(&mut doc, "warm_start", false)?;
        let ws = WarmStart {
            rows: doc.parsed_or("warm_start_n", 500)?,
            epochs: doc.parsed_or("warm_start_epochs", 5)?,
            learning_rate: doc.parsed_or("warm_start_lr", 0.05)?,
        };
        if !warm {
            for key in ["warm_start_n", "warm_start_epochs", "warm_start_lr"] {
                if doc.contains(key) {
                    return Err(doc.error(key, "only meaningful with warm_start=true"));
                }
            }
        }

        let federation = FederationConfig {
            parties,
            rounds: doc.parsed_or("rounds", d.rounds)?,
            t1: doc.parsed_or("t1", d.t1)?,
            t2: doc.parsed_or("t2", d.t2)?,
            t3: doc.parsed_or("t3", d.t3)?,
            k: doc.parsed_or("k", d.k)?,
            scheme: choice(&mut doc, "sampling", d.scheme, &SCHEMES)?,
            mode: choice(&mut doc, "mode", d.mode, &MODES)?,
            privacy,
            public_subset_size: doc.parsed_or("public_size", d.public_subset_size)?,
            public_policy: choice(&mut doc, "public_policy", d.public_policy, &POLICIES)?,
            public_pool_size: doc.parsed_or("public_pool_size", d.public_pool_size)?,
            public_distribution,
            hidden: parse_hidden(&mut doc)?,
            batch_size: doc.parsed_or("batch", d.batch_size)?,
            lr_digest: doc.parsed_or("lr_digest", d.lr_digest)?,
            lr_revisit: doc.parsed_or("lr_revisit", d.lr_revisit)?,
            warm_start: warm.then_some(ws),
            execution: d.execution,
            master_seed: 0,
        };
        let file_seed: u64 = doc.parsed_or("seed", 0)?;
        let charts = parse_bool(&mut doc, "charts", false)?;
        let settings = Self {
            federation: FederationConfig {
                master_seed: seed.unwrap_or(file_seed),
                ..federation
            },
            task,
            plan,
            charts,
        };
        settings.check(&doc)?;
        doc.finish()?;
        Ok(settings)
    }

    /// Cross-key consistency, reported against the offending key.
    fn check(&self, doc: &ConfigDocument) -> Result<(), ConfigError> {
        let f = &self.federation;
        let fail = |key: &str, msg: String| Err(doc.error(key, msg));
        if f.parties == 0 {
            return fail("parties", "must be at least 1".into());
        }
        if f.privacy != PrivacyMode::NonPrivate {
            if f.k == 0 {
                return fail("k", "must be at least 1".into());
            }
            if f.scheme == SamplingScheme::WithoutReplacement && f.k > self.plan.per_party_n {
                return fail(
                    "k",
                    format!("k = {} exceeds dataset size n = {} without replacement", f.k, self.plan.per_party_n),
                );
            }
        }
        if self.plan.per_party_n == 0 {
            return fail("per_party_n", "must be at least 1".into());
        }
        if self.plan.mode == PartitionMode::NonIidSubclass && f.parties > self.task.subclasses_per_super {
            return fail(
                "parties",
                format!(
                    "partition=subclass needs parties <= task_subclasses ({})",
                    self.task.subclasses_per_super
                ),
            );
        }
        if self.plan.mode == PartitionMode::NonIidSubclass && self.task.label_space == LabelSpace::Subclass {
            return fail("task_labels", "partition=subclass labels by superclass".into());
        }
        if f.public_subset_size == 0 || f.public_subset_size > f.public_pool_size {
            return fail("public_size", format!("must be in [1, public_pool_size = {}]", f.public_pool_size));
        }
        if f.mode == KnowledgeMode::Argmax && matches!(f.privacy, PrivacyMode::FedLdp(_)) {
            return fail("mode", "privacy=ldp needs logits or softmax knowledge".into());
        }
        if self.task.features < 2 {
            return fail("task_features", "must be at least 2".into());
        }
        if self.task.superclasses < 2 {
            return fail("task_superclasses", "must be at least 2".into());
        }
        if self.task.subclasses_per_super < 1 {
            return fail("task_subclasses", "must be at least 1".into());
        }
        f.validate().map_err(|e| ConfigError {
            line: None,
            key: None,
            ..doc.error("", e.to_string())
        })
    }

    /// Every key with its effective value; parsing this reproduces `self`.
    pub fn effective_config(&self) -> String {
        let f = &self.federation;
        let t = &self.task;
        let p = &self.plan;
        let mut s = String::from("# effective configuration, defaults applied\n");
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("string write");
        kv("seed", f.master_seed.to_string());
        kv("parties", f.parties.to_string());
        kv("rounds", f.rounds.to_string());
        kv("t1", f.t1.to_string());
        kv("t2", f.t2.to_string());
        kv("t3", f.t3.to_string());
        kv("k", f.k.to_string());
        kv("sampling", name_of(f.scheme, &SCHEMES).into());
        kv("mode", name_of(f.mode, &MODES).into());
        match f.privacy {
            PrivacyMode::Nfdp => kv("privacy", "nfdp".into()),
            PrivacyMode::NonPrivate => kv("privacy", "none".into()),
            PrivacyMode::FedLdp(ldp) => {
                kv("privacy", "ldp".into());
                match ldp.noise {
                    LdpNoise::Sigma { sigma, delta } => {
                        kv("ldp_sigma", sigma.to_string());
                        kv("ldp_delta", delta.to_string());
                    }
                    LdpNoise::Target(b) => {
                        kv("ldp_epsilon", b.epsilon_nat().to_string());
                        kv("ldp_delta", b.delta().to_string());
                    }
                }
                kv("ldp_c2", ldp.c2.to_string());
                kv("ldp_query_rule", name_of(ldp.query_rule, &RULES).into());
                kv("ldp_composition", name_of(ldp.composition, &COMPOSITIONS).into());
            }
        }
        kv("public_size", f.public_subset_size.to_string());
        kv("public_policy", name_of(f.public_policy, &POLICIES).into());
        kv("public_pool_size", f.public_pool_size.to_string());
        match f.public_distribution {
            PoolDistribution::Matched => kv("public_pool", "matched".into()),
            PoolDistribution::Shifted(x) => {
                kv("public_pool", "shifted".into());
                kv("public_shift", x.to_string());
            }
        }
        kv("task_features", t.features.to_string());
        kv("task_superclasses", t.superclasses.to_string());
        kv("task_subclasses", t.subclasses_per_super.to_string());
        kv("task_separation", t.separation.to_string());
        kv("task_noise", t.noise_sigma.to_string());
        kv("task_labels", name_of(t.label_space, &LABELS).into());
        kv("partition", name_of(p.mode, &PARTITIONS).into());
        kv("per_party_n", p.per_party_n.to_string());
        kv("shift_strength", p.shift_strength.to_string());
        kv("test_size", p.test_size.to_string());
        kv("lr_digest", f.lr_digest.to_string());
        kv("lr_revisit", f.lr_revisit.to_string());
        kv("batch", f.batch_size.to_string());
        let hidden = if f.hidden.is_empty() {
            "none".to_string()
        } else {
            f.hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
        };
        kv("layer_dims", hidden);
        match f.warm_start {
            None => kv("warm_start", "false".into()),
            Some(ws) => {
                kv("warm_start", "true".into());
                kv("warm_start_n", ws.rows.to_string());
                kv("warm_start_epochs", ws.epochs.to_string());
                kv("warm_start_lr", ws.learning_rate.to_string());
            }
        }
        kv("charts", self.charts.to_string());
        s
    }

    pub fn with_threads(mut self, threads: Option<usize>) -> Self {
        self.federation.execution = Execution::Parallel { threads };
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(text: &str) -> Result<SimulateSettings, ConfigError> {
        SimulateSettings::from_document(ConfigDocument::parse(text)?, None)
    }

    #[test]
    fn defaults_describe_the_standard_task() {
        let s = settings("").unwrap();
        assert_eq!(s.task.features, 20);
        assert_eq!((s.task.superclasses, s.task.subclasses_per_super), (4, 3));
        assert_eq!(s.plan.mode, PartitionMode::NonIidShift);
        assert_eq!((s.federation.parties, s.federation.rounds, s.federation.k), (5, 20, 60));
        assert!(!s.charts);
    }

    #[test]
    fn effective_config_round_trips() {
        for text in [
            "",
            "privacy=ldp\nldp_sigma=3.5\nldp_delta=1e-5\nldp_query_rule=per_example\nmode=logits\n",
            "privacy=ldp\nldp_epsilon=2\nldp_delta=0.001\nldp_composition=basic\n",
            "privacy=none\npublic_pool=shifted\npublic_shift=0.3\nwarm_start=true\nwarm_start_n=50\nlayer_dims=none\n",
            "partition=subclass\nparties=3\nlayer_dims=16,8\ncharts=true\nseed=77\nsampling=without\nk=300\n",
        ] {
            let s = settings(text).unwrap();
            let again = settings(&s.effective_config()).unwrap();
            assert_eq!(s, again, "{text}");
        }
    }

    #[test]
    fn seed_flag_overrides_the_file() {
        let doc = ConfigDocument::parse("seed=5\n").unwrap();
        assert_eq!(SimulateSettings::from_document(doc, Some(9)).unwrap().federation.master_seed, 9);
    }

    #[test]
    fn bad_keys_are_located() {
        let e = settings("parties=3\nroundz=4\n").unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (Some(2), Some("roundz")));
        let e = settings("\n\nmode=average\n").unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (Some(3), Some("mode")));
        let e = settings("sampling=without\nk=301\n").unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (Some(2), Some("k")));
        let e = settings("partition=subclass\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("parties"));
        let e = settings("privacy=ldp\nldp_delta=0.1\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("ldp_sigma"));
        let e = settings("ldp_sigma=2\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("ldp_sigma"));
        let e = settings("privacy=ldp\nldp_sigma=1\nldp_delta=0.1\nmode=argmax\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("mode"));
        assert!(settings("layer_dims=8,0\n").is_err());
        assert!(settings("charts=yes\n").is_err());
    }
}
