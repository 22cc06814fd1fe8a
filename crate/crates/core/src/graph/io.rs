//! Graph JSON interchange and DOT export.

use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dag::{default_labels, Dag};
use super::model::{CammeModel, NoiseSpec, WeightedDag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub from: usize,
    pub to: usize,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// `{ n, labels, edges: [{from, to, weight}], noise: [...], me_variance: [...] }`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub n: usize,
    #[serde(default)]
    pub labels: Vec<String>,
    pub edges: Vec<EdgeJson>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub noise: Vec<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub me_variance: Vec<f64>,
}

impl GraphJson {
    pub fn from_model(m: &CammeModel) -> Self {
        let mut g = Self::from_sem(&m.sem);
        g.noise = m.noise.clone();
        g.me_variance = m.me_variances.clone();
        g
    }

    pub fn from_sem(sem: &WeightedDag) -> Self {
        GraphJson {
            n: sem.n(),
            labels: sem.dag().labels().to_vec(),
            edges: sem.weighted_edges().into_iter().map(|(from, to, weight)| EdgeJson { from, to, weight }).collect(),
            noise: Vec::new(),
            me_variance: Vec::new(),
        }
    }

    fn labels_or_default(&self) -> Vec<String> {
        if self.labels.is_empty() {
            default_labels(self.n)
        } else {
            self.labels.clone()
        }
    }

    pub fn to_sem(&self) -> Result<WeightedDag> {
        let labels = self.labels_or_default();
        if labels.len() != self.n {
            return Err(Error::Structural(format!("{} labels for {} nodes", labels.len(), self.n)));
        }
        let edges: Vec<_> = self.edges.iter().map(|e| (e.from, e.to, e.weight)).collect();
        WeightedDag::from_edges(labels, &edges)
    }

    pub fn to_dag(&self) -> Result<Dag> {
        Ok(self.to_sem()?.dag().clone())
    }

    /// Requires `noise` and `me_variance` to be present.
    pub fn to_model(&self) -> Result<CammeModel> {
        if self.noise.is_empty() || self.me_variance.is_empty() {
            return Err(Error::Config("graph JSON lacks noise or me_variance".into()));
        }
        CammeModel::new(self.to_sem()?, self.noise.clone(), self.me_variance.clone())
    }
}

pub fn read_graph_json(path: &Path) -> Result<GraphJson> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_graph_json(path: &Path, g: &GraphJson) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(g)?)?;
    Ok(())
}

pub fn dag_to_dot(dag: &Dag) -> String {
    weighted_dot(dag, |_, _| None)
}

pub fn sem_to_dot(sem: &WeightedDag) -> String {
    weighted_dot(sem.dag(), |f, t| Some(sem.weight(f, t)))
}

fn weighted_dot(dag: &Dag, weight: impl Fn(usize, usize) -> Option<f64>) -> String {
    let mut s = String::from("digraph G {\n");
    for (i, l) in dag.labels().iter().enumerate() {
        let _ = writeln!(s, "  {i} [label=\"{l}\"];");
    }
    for (f, t) in dag.edges() {
        match weight(f, t) {
            Some(w) => {
                let _ = writeln!(s, "  {f} -> {t} [label=\"{w:.4}\"];");
            }
            None => {
                let _ = writeln!(s, "  {f} -> {t};");
            }
        }
    }
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trips_through_json() {
        let sem = WeightedDag::from_edges(default_labels(3), &[(0, 1, 0.5), (2, 1, -1.0)]).unwrap();
        let m = CammeModel::new(sem, vec![NoiseSpec::gmm(1.0); 3], vec![0.2; 3]).unwrap();
        let text = serde_json::to_string(&GraphJson::from_model(&m)).unwrap();
        let back: GraphJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_model().unwrap(), m);
    }

    #[test]
    fn parses_minimal_json() {
        let g: GraphJson = serde_json::from_str(
            r#"{"n": 2, "edges": [{"from": 0, "to": 1, "weight": 2.0}],
                "noise": [{"dist": "uniform", "variance": 1.0}, {"dist": "gaussian", "variance": 1.0}],
                "me_variance": [0.1, 0.1]}"#,
        )
        .unwrap();
        let m = g.to_model().unwrap();
        assert_eq!(m.labels(), &["X1".to_string(), "X2".to_string()]);
        assert_eq!(m.sem.weight(0, 1), 2.0);
        assert!(sem_to_dot(&m.sem).contains("0 -> 1"));
    }
}
