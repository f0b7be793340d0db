use serde::{Deserialize, Serialize};

use super::records::SalesRecord;

/// Trim, lowercase and collapse internal whitespace runs to one space.
pub fn normalize_category(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Category values in first-appearance order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    pub values: Vec<String>,
}

impl Vocabulary {
    pub fn fit<'a>(items: impl IntoIterator<Item = &'a str>) -> Self {
        let mut values: Vec<String> = Vec::new();
        for s in items {
            let s = normalize_category(s);
            if !values.contains(&s) {
                values.push(s);
            }
        }
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, s: &str) -> Option<usize> {
        let s = normalize_category(s);
        self.values.iter().position(|v| *v == s)
    }

    /// One-hot block; unknown values encode as all zeros.
    pub fn encode_into(&self, s: &str, out: &mut Vec<f64>) {
        let start = out.len();
        out.resize(start + self.len(), 0.0);
        if let Some(i) = self.index_of(s) {
            out[start + i] = 1.0;
        }
    }
}

/// Vocabularies for the categorical columns. `region` is `None` when disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalEncoder {
    pub form: Vocabulary,
    pub company: Vocabulary,
    pub region: Option<Vocabulary>,
}

impl CategoricalEncoder {
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a SalesRecord> + Clone, use_region: bool) -> Self {
        Self {
            form: Vocabulary::fit(records.clone().into_iter().map(|r| r.form.as_str())),
            company: Vocabulary::fit(records.clone().into_iter().map(|r| r.company.as_str())),
            region: use_region.then(|| Vocabulary::fit(records.into_iter().map(|r| r.region.as_str()))),
        }
    }

    pub fn width(&self) -> usize {
        self.form.len() + self.company.len() + self.region.as_ref().map_or(0, Vocabulary::len)
    }

    pub fn encode(&self, r: &SalesRecord) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        self.form.encode_into(&r.form, &mut out);
        self.company.encode_into(&r.company, &mut out);
        if let Some(v) = &self.region {
            v.encode_into(&r.region, &mut out);
        }
        out
    }

    pub fn channel_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        for (prefix, vocab) in [("form", Some(&self.form)), ("company", Some(&self.company)), ("region", self.region.as_ref())] {
            if let Some(v) = vocab {
                names.extend(v.values.iter().map(|s| format!("{prefix}={s}")));
            }
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::quarter::Quarter;

    fn rec(form: &str, company: &str, region: &str) -> SalesRecord {
        SalesRecord {
            drugname: "d".into(),
            price: 1.0,
            date: Quarter { year: 2015, q: 1 },
            form: form.into(),
            company: company.into(),
            region: region.into(),
            sales_volume: 1.0,
            effectiveness: 1.0,
            user_evaluate: 1.0,
        }
    }

    #[test]
    fn one_hot_and_unknown() {
        let v = Vocabulary::fit(["A", "B"]);
        let mut out = Vec::new();
        v.encode_into("B", &mut out);
        assert_eq!(out, [0.0, 1.0]);
        out.clear();
        v.encode_into("C", &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn standardization() {
        assert_eq!(normalize_category("  Film \t Coated  Tablet "), "film coated tablet");
        let v = Vocabulary::fit([" tablet ", "Tablet", "TABLET", "vial"]);
        assert_eq!(v.values, ["tablet", "vial"]);
        assert_eq!(v.index_of(" Tablet"), Some(0));
    }

    #[test]
    fn encoder_layout_and_region_switch() {
        let recs = [rec("Tab", "X", "Cairo"), rec("Vial", "Y", "Giza"), rec("tab", "Y", "Cairo")];
        let enc = CategoricalEncoder::fit(recs.iter(), true);
        assert_eq!(enc.width(), 6);
        assert_eq!(enc.encode(&recs[1]), [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(enc.channel_names()[0], "form=tab");
        let no_region = CategoricalEncoder::fit(recs.iter(), false);
        assert_eq!(no_region.width(), 4);
        assert_eq!(no_region.encode(&rec("capsule", "X", "Z")), [0.0, 0.0, 1.0, 0.0]);
    }
}
