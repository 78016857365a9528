//! A small self-contained bundle: 200 codes, knowledge files, embeddings and a
//! five-record corpus whose gold evidence is planted in known locations.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{AssetPaths, Config};
use crate::corpus::{ingest_record, EmrDocument, Lexicon, RawRecord, RawSection};
use crate::embedding::EmbeddingTable;
use crate::eval::{build_verifier_dataset, EvalError, VerifierDataset};
use crate::knowledge::{
    AxisKnowledge, AxisTable, CodeTable, IcdCode, LocationRegistry, PriorLocationTable, PriorRow, SynonymLexicon,
};
use crate::pipeline::{AssetParts, Assets, Engine, PipelineError};
use crate::verify::{train_verifier, FeatureVerifierModel, TrainConfig, VerifyError};

pub const TOY_EMBEDDING_DIM: usize = 32;
const EMBEDDING_SEED: u64 = 20_231_101;
pub const TOY_NEG_PER_POS: usize = 5;

const SITES: [&str; 20] = [
    "肺",
    "肝",
    "胃",
    "肾",
    "心脏",
    "脑",
    "眼",
    "耳",
    "鼻",
    "喉",
    "食管",
    "胰腺",
    "胆囊",
    "膀胱",
    "结肠",
    "皮肤",
    "骨",
    "关节",
    "甲状腺",
    "乳腺",
];

/// (condition, synonym, manifestation, etiology)
const CONDITIONS: [(&str, &str, &str, &str); 10] = [
    ("出血", "渗血", "贫血", "外伤"),
    ("感染", "侵染", "发热", "细菌"),
    ("肿瘤", "肿物", "消瘦", "吸烟"),
    ("结石", "砂石", "绞痛", "高钙"),
    ("炎症", "发炎", "红肿", "免疫"),
    ("溃疡", "糜烂", "疼痛", "幽门菌"),
    ("囊肿", "囊泡", "压迫感", "先天"),
    ("梗阻", "阻塞", "胀满", "粘连"),
    ("损伤", "挫伤", "肿胀", "撞击"),
    ("纤维化", "硬化", "僵硬", "辐射"),
];

const FILLER: [&str; 20] = [
    "患者",
    "出现",
    "逐渐",
    "加重",
    "诊断为",
    "对症",
    "治疗",
    "好转",
    "出院",
    "既往",
    "体健",
    "否认",
    "过敏史",
    "查体",
    "未见",
    "明显",
    "异常",
    "急性",
    "右",
    "左",
];

/// Sites below this index are imaged by CT, the rest by ultrasound.
const CT_SITES: usize = 10;

struct Planted {
    site: usize,
    condition: usize,
    diagnosis: &'static str,
    /// Write the condition's synonym instead of the condition in the evidence.
    use_synonym: bool,
    days: u32,
}

fn planted(site: usize, condition: usize, diagnosis: &'static str, use_synonym: bool, days: u32) -> Planted {
    Planted {
        site,
        condition,
        diagnosis,
        use_synonym,
        days,
    }
}

fn records_plan() -> Vec<(&'static str, Vec<Planted>)> {
    vec![
        (
            "toy-001",
            vec![planted(0, 0, "右肺出血", false, 3), planted(3, 3, "肾结石", false, 2)],
        ),
        (
            "toy-002",
            vec![planted(1, 2, "肝肿瘤", false, 30), planted(12, 4, "胆囊炎症", true, 5)],
        ),
        (
            "toy-003",
            vec![planted(2, 5, "急性胃溃疡", false, 7), planted(6, 8, "眼损伤", false, 1)],
        ),
        (
            "toy-004",
            vec![
                planted(5, 6, "脑囊肿", false, 14),
                planted(16, 9, "骨纤维化", true, 60),
                planted(10, 7, "食管梗阻", false, 4),
            ],
        ),
        (
            "toy-005",
            vec![
                planted(18, 1, "甲状腺感染", false, 6),
                planted(7, 0, "左耳出血", false, 2),
            ],
        ),
    ]
}

pub fn code_of(site: usize, condition: usize) -> String {
    format!("T{site:02}.{condition}")
}

#[derive(Debug, Error)]
pub enum ToyError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

/// Everything needed to run the pipeline on the toy corpus.
pub struct ToyBundle {
    pub codes: CodeTable,
    pub axes: AxisTable,
    pub synonyms: SynonymLexicon,
    pub lexicon: Vec<String>,
    pub embeddings: EmbeddingTable,
    pub prior_rows: Vec<PriorRow>,
    pub records: Vec<RawRecord>,
}

fn random_vector(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..TOY_EMBEDDING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn build_record(record_id: &str, plan: &[Planted]) -> RawRecord {
    let cond = |p: &Planted| CONDITIONS[p.condition];
    let chief = format!("反复不适{}天", plan.iter().map(|p| p.days).max().unwrap_or(1));
    let illness: String = plan
        .iter()
        .map(|p| format!("患者{}后出现{}，逐渐加重。", cond(p).3, cond(p).2))
        .collect();
    let finding = |p: &Planted| {
        let (name, synonym, _, _) = cond(p);
        format!("{}{}", SITES[p.site], if p.use_synonym { synonym } else { name })
    };
    let ct: String = plan
        .iter()
        .filter(|p| p.site < CT_SITES)
        .map(|p| format!("CT示{}。", finding(p)))
        .collect();
    let us: String = plan
        .iter()
        .filter(|p| p.site >= CT_SITES)
        .map(|p| format!("超声示{}。", finding(p)))
        .collect();
    let diagnoses: Vec<String> = plan.iter().map(|p| p.diagnosis.to_string()).collect();
    let summary = format!("患者经对症治疗后好转出院。诊断为{}。", diagnoses.join("、"));

    let mut sections = vec![
        RawSection {
            location_id: "chief-complaint".into(),
            title: "主诉".into(),
            text: format!("{chief}。"),
        },
        RawSection {
            location_id: "present-illness".into(),
            title: "现病史".into(),
            text: illness,
        },
        RawSection {
            location_id: "past-history".into(),
            title: "既往史".into(),
            text: "既往体健，否认过敏史。".into(),
        },
        RawSection {
            location_id: "examination-results".into(),
            title: "检查及结果".into(),
            text: "查体未见明显异常。".into(),
        },
    ];
    if !ct.is_empty() {
        sections.push(RawSection {
            location_id: "imaging-ct".into(),
            title: "CT检查".into(),
            text: ct,
        });
    }
    if !us.is_empty() {
        sections.push(RawSection {
            location_id: "ultrasound".into(),
            title: "超声检查".into(),
            text: us,
        });
    }
    sections.push(RawSection {
        location_id: "discharge-summary".into(),
        title: "出院小结".into(),
        text: summary,
    });
    RawRecord {
        record_id: record_id.into(),
        sections,
        gold_codes: plan
            .iter()
            .enumerate()
            .map(|(i, p)| (i.to_string(), code_of(p.site, p.condition)))
            .collect(),
        diagnoses,
    }
}

pub fn toy_bundle() -> ToyBundle {
    let mut codes = Vec::new();
    let mut axes = AxisTable::new();
    for (s, site) in SITES.iter().enumerate() {
        for (c, (condition, _, manifestation, etiology)) in CONDITIONS.iter().enumerate() {
            let code = code_of(s, c);
            codes.push(IcdCode::new(&code, &format!("{site}{condition}")).expect("toy codes are well formed"));
            axes.insert(
                code,
                AxisKnowledge {
                    etiology: vec![etiology.to_string()],
                    anatomy: vec![site.to_string()],
                    pathology: vec![condition.to_string()],
                    manifestation: vec![manifestation.to_string()],
                },
            );
        }
    }
    let codes = CodeTable::from_codes(codes).expect("toy codes are unique");

    let mut synonyms = BTreeMap::new();
    for (condition, synonym, _, _) in CONDITIONS {
        synonyms.insert(condition.to_string(), vec![synonym.to_string()]);
        synonyms.insert(synonym.to_string(), vec![condition.to_string()]);
    }

    let mut lexicon: Vec<String> = SITES.iter().map(|s| s.to_string()).collect();
    for (a, b, c, d) in CONDITIONS {
        lexicon.extend([a, b, c, d].map(String::from));
    }
    lexicon.extend(FILLER.map(String::from));
    lexicon.extend(["CT示", "超声示"].map(String::from));

    let mut rng = ChaCha8Rng::seed_from_u64(EMBEDDING_SEED);
    let mut embeddings = EmbeddingTable::new(TOY_EMBEDDING_DIM);
    for word in &lexicon {
        embeddings.insert(word.clone(), random_vector(&mut rng));
    }
    // synonyms sit close to the word they stand for
    for (condition, synonym, _, _) in CONDITIONS {
        let base = embeddings.get(condition).expect("condition embedded").to_vec();
        let noise = random_vector(&mut rng);
        embeddings.insert(synonym, base.iter().zip(noise).map(|(b, n)| b + 0.1 * n).collect());
    }

    let rows = |start: usize, end: usize, imaging: &str| PriorRow {
        group_start: format!("T{start:02}"),
        group_end: format!("T{end:02}"),
        locations: [
            "chief-complaint",
            "present-illness",
            imaging,
            "examination-results",
            "discharge-summary",
        ]
        .map(String::from)
        .to_vec(),
    };
    let prior_rows = vec![
        rows(0, CT_SITES - 1, "imaging-ct"),
        rows(CT_SITES, SITES.len() - 1, "ultrasound"),
    ];

    let records = records_plan().iter().map(|(id, plan)| build_record(id, plan)).collect();
    ToyBundle {
        codes,
        axes,
        synonyms: SynonymLexicon::new(synonyms),
        lexicon,
        embeddings,
        prior_rows,
        records,
    }
}

impl ToyBundle {
    pub fn assets(&self, verifier_model: Option<FeatureVerifierModel>) -> Assets {
        let registry = LocationRegistry::default_registry();
        let prior_table = PriorLocationTable::compile(&self.prior_rows, &registry).expect("toy prior rows are valid");
        Assets::new(AssetParts {
            codes: self.codes.clone(),
            axis_table: Some(self.axes.clone()),
            axis_lexicons: None,
            synonyms: self.synonyms.clone(),
            registry,
            prior_table,
            lexicon: Lexicon::new(self.lexicon.iter().cloned()),
            embeddings: self.embeddings.clone(),
            verifier_model,
        })
    }

    pub fn documents(&self) -> Vec<EmrDocument> {
        let registry = LocationRegistry::default_registry();
        self.records
            .iter()
            .map(|r| {
                ingest_record(r.clone(), &registry)
                    .expect("toy records are valid")
                    .document
            })
            .collect()
    }

    /// Trains the built-in verifier on the toy corpus's own candidates.
    pub fn train_verifier(&self, config: &Config) -> Result<(FeatureVerifierModel, f64, VerifierDataset), ToyError> {
        let engine = Engine::new(Arc::new(self.assets(None)), config.clone())?;
        let dataset = build_verifier_dataset(&engine, &self.documents(), TOY_NEG_PER_POS)?;
        let train = TrainConfig {
            seed: config.runtime.seed,
            ..Default::default()
        };
        let (model, loss) = train_verifier(&dataset.examples, &train)?;
        Ok((model, loss, dataset))
    }

    /// Writes the bundle, a trained verifier and a config file into `dir`.
    ///
    /// Returns the config path.
    pub fn write(&self, dir: &Path, model: &FeatureVerifierModel) -> Result<PathBuf, ToyError> {
        fs::create_dir_all(dir.join("corpus"))?;
        let json = |v: &dyn erased::Json| v.to_json();
        let mut tsv = String::from("code\tdescription\n");
        for c in self.codes.codes() {
            tsv.push_str(&format!("{}\t{}\n", c.code, c.description));
        }
        fs::write(dir.join("codes.tsv"), tsv)?;
        fs::write(dir.join("axes.json"), json(&self.axes))?;
        fs::write(dir.join("synonyms.json"), json(&self.synonyms))?;
        fs::write(dir.join("lexicon.txt"), self.lexicon.join("\n") + "\n")?;
        fs::write(dir.join("embeddings.txt"), self.embeddings.to_text())?;
        fs::write(dir.join("prior_table.json"), json(&self.prior_rows))?;
        fs::write(dir.join("verifier.json"), model.to_json())?;
        for r in &self.records {
            fs::write(dir.join("corpus").join(format!("{}.json", r.record_id)), json(r))?;
        }
        let config = Config {
            assets: AssetPaths {
                codes: Some("codes.tsv".into()),
                axes: Some("axes.json".into()),
                synonyms: Some("synonyms.json".into()),
                prior_table: Some("prior_table.json".into()),
                lexicon: Some("lexicon.txt".into()),
                embeddings: Some("embeddings.txt".into()),
                verifier_model: Some("verifier.json".into()),
                ..Default::default()
            },
            ..Default::default()
        };
        let path = dir.join("config.json");
        fs::write(&path, json(&config))?;
        Ok(path)
    }
}

mod erased {
    pub trait Json {
        fn to_json(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> String {
            serde_json::to_string_pretty(self).expect("toy data serializes") + "\n"
        }
    }
}

/// Toy descriptions with one or two character edits or a synonym swap, paired
/// with the code they came from.
pub fn perturbed_diagnoses(bundle: &ToyBundle, seed: u64) -> Vec<(String, String)> {
    const NOISE: &[char] = &[
        '的', '一', '是', '不', '了', '人', '在', '有', '大', '上', '中', '小', '性', '部', '区', '样', '多', '状',
        '发', '生',
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(bundle.codes.len());
    for code in bundle.codes.codes() {
        let kind = rng.gen_range(0..3);
        let text = if kind == 2 {
            let condition = CONDITIONS
                .iter()
                .find(|(c, ..)| code.description.ends_with(c))
                .expect("toy description ends with its condition");
            code.description.replacen(condition.0, condition.1, 1)
        } else {
            let mut chars: Vec<char> = code.description.chars().collect();
            for _ in 0..=kind {
                let noise = *NOISE.choose(&mut rng).expect("noise pool is nonempty");
                match rng.gen_range(0..3) {
                    0 if chars.len() > 2 => {
                        chars.remove(rng.gen_range(0..chars.len()));
                    }
                    1 => chars.insert(rng.gen_range(0..=chars.len()), noise),
                    _ => {
                        let i = rng.gen_range(0..chars.len());
                        chars[i] = noise;
                    }
                }
            }
            chars.into_iter().collect()
        };
        out.push((text, code.code.clone()));
    }
    out
}
