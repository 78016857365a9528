//! Shipped location registry and illustrative prior-location rows.

/// Canonical EMR locations as `(id, display name)`.
pub(crate) const DEFAULT_LOCATIONS: [(&str, &str); 88] = [
    ("chief-complaint", "主诉"),
    ("present-illness", "现病史"),
    ("past-history", "既往史"),
    ("personal-history", "个人史"),
    ("marital-history", "婚育史"),
    ("menstrual-history", "月经史"),
    ("family-history", "家族史"),
    ("allergy-history", "过敏史"),
    ("surgical-history", "手术史"),
    ("trauma-history", "外伤史"),
    ("transfusion-history", "输血史"),
    ("vaccination-infectious-history", "预防接种及传染病史"),
    ("exposure-endemic-history", "疫区接触史"),
    ("occupation-working-conditions", "职业及工作条件"),
    ("symptom-presentation", "症状表现"),
    ("vital-signs", "生命体征"),
    ("general-examination", "一般检查"),
    ("examination-results", "检查及结果"),
    ("testing-results", "检验及结果"),
    ("skin-mucosa-examination", "皮肤黏膜检查结果"),
    ("lymph-node-examination", "淋巴结检查"),
    ("head-facial-examination", "头面部检查结果"),
    ("eye-examination", "眼部检查"),
    ("ear-examination", "耳部检查"),
    ("nose-examination", "鼻部检查"),
    ("oral-examination", "口腔检查"),
    ("neck-examination", "颈部检查"),
    ("thyroid-examination", "甲状腺检查"),
    ("chest-examination", "胸部检查结果"),
    ("lung-examination", "肺部检查"),
    ("heart-examination", "心脏检查"),
    ("breast-examination", "乳腺检查"),
    ("abdominal-examination", "腹部检查"),
    ("liver-gallbladder-examination", "肝胆检查"),
    ("spleen-examination", "脾脏检查"),
    ("kidney-examination", "肾区检查"),
    ("external-genital-examination", "外生殖器检查结果"),
    ("anorectal-examination", "肛门直肠检查"),
    ("spine-examination", "脊柱检查"),
    ("limb-examination", "四肢检查"),
    ("joint-examination", "关节检查"),
    ("neurological-reflex-examination", "神经反射检查结果"),
    ("neurological-examination", "神经系统检查"),
    ("mental-status-examination", "精神状态检查"),
    ("specialist-examination", "专科检查"),
    ("ophthalmic-specialist-examination", "眼科专科检查"),
    ("ent-specialist-examination", "耳鼻喉专科检查"),
    ("gynecological-examination", "妇科检查"),
    ("obstetric-examination", "产科检查"),
    ("dermatological-examination", "皮肤科专科检查"),
    ("blood-routine", "血常规"),
    ("urine-routine", "尿常规"),
    ("stool-routine", "便常规"),
    ("liver-function", "肝功能"),
    ("renal-function", "肾功能"),
    ("blood-biochemistry", "血生化"),
    ("coagulation-function", "凝血功能"),
    ("tumor-markers", "肿瘤标志物"),
    ("infection-markers", "感染指标"),
    ("immunology-tests", "免疫学检查"),
    ("microbiology-culture", "病原学培养"),
    ("pathology-report", "病理报告"),
    ("imaging-xray", "X线检查"),
    ("imaging-ct", "CT检查"),
    ("imaging-mri", "磁共振检查"),
    ("ultrasound", "超声检查"),
    ("ecg", "心电图"),
    ("echocardiography", "超声心动图"),
    ("endoscopy", "内镜检查"),
    ("fundus-examination", "眼底检查"),
    ("angiography", "血管造影"),
    ("pulmonary-function", "肺功能检查"),
    ("eeg", "脑电图"),
    ("bone-marrow", "骨髓检查"),
    ("admission-diagnosis", "入院诊断"),
    ("preliminary-diagnosis", "初步诊断"),
    ("diagnostic-basis", "诊断依据"),
    ("differential-diagnosis", "鉴别诊断"),
    ("treatment-plan", "诊疗计划"),
    ("course-record", "病程记录"),
    ("ward-round-record", "查房记录"),
    ("consultation-record", "会诊记录"),
    ("operation-record", "手术记录"),
    ("anesthesia-record", "麻醉记录"),
    ("nursing-record", "护理记录"),
    ("discharge-summary", "出院小结"),
    ("discharge-diagnosis", "出院诊断"),
    ("discharge-instructions", "出院医嘱"),
];

/// Rows of the published fragment of the prior table: `(start, end, locations)`.
///
/// Illustrative only. A production deployment supplies the full table.
pub(crate) const ILLUSTRATIVE_PRIOR_ROWS: [(&str, &str, &[&str]); 8] = [
    (
        "A00",
        "A09",
        &["testing-results", "symptom-presentation", "exposure-endemic-history"],
    ),
    (
        "A15",
        "A19",
        &[
            "symptom-presentation",
            "examination-results",
            "chest-examination",
            "vaccination-infectious-history",
        ],
    ),
    ("A20", "A28", &["testing-results", "occupation-working-conditions"]),
    (
        "A30",
        "A49",
        &[
            "skin-mucosa-examination",
            "testing-results",
            "neurological-reflex-examination",
        ],
    ),
    (
        "A50",
        "A64",
        &[
            "skin-mucosa-examination",
            "external-genital-examination",
            "testing-results",
        ],
    ),
    (
        "A65",
        "A69",
        &["skin-mucosa-examination", "testing-results", "exposure-endemic-history"],
    ),
    (
        "A70",
        "A74",
        &["chest-examination", "head-facial-examination", "testing-results"],
    ),
    ("A75", "A79", &["testing-results", "exposure-endemic-history"]),
];
