//! Model files: `DSPEARM1`, u32 LE header length, JSON header, f32 LE payload.

use serde::{Deserialize, Serialize};

use super::gmm::GmmModel;
use super::tree::{DecisionTreeModel, SpeechClass, TreeNode};
use super::{Gender, Model};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DSPEARM1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Header {
    Gmm {
        label: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gender: Option<Gender>,
        n_components: usize,
        dim: usize,
    },
    Tree {
        n_features: usize,
        nodes: Vec<NodeShape>,
    },
}

/// Tree node without its float; the float lives in the payload.
#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum NodeShape {
    Split { feature: usize, left: usize, right: usize },
    Leaf { class: SpeechClass },
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptModel(msg.into())
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let (header, payload): (Header, Vec<f64>) = match model {
        Model::Gmm(g) => {
            let mut p = Vec::with_capacity(g.parameter_bytes() / 4);
            p.extend_from_slice(g.weights());
            g.means().iter().for_each(|m| p.extend_from_slice(m));
            g.variances().iter().for_each(|v| p.extend_from_slice(v));
            (
                Header::Gmm {
                    label: g.label.clone(),
                    gender: g.gender,
                    n_components: g.n_components(),
                    dim: g.dim(),
                },
                p,
            )
        }
        Model::Tree(t) => {
            let mut shapes = Vec::with_capacity(t.nodes.len());
            let mut p = Vec::with_capacity(t.nodes.len());
            for n in &t.nodes {
                match n {
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        shapes.push(NodeShape::Split {
                            feature: *feature,
                            left: *left,
                            right: *right,
                        });
                        p.push(*threshold);
                    }
                    TreeNode::Leaf { class, confidence } => {
                        shapes.push(NodeShape::Leaf { class: *class });
                        p.push(*confidence);
                    }
                }
            }
            (
                Header::Tree {
                    n_features: t.n_features,
                    nodes: shapes,
                },
                p,
            )
        }
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header.len() + 4 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in payload {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing DSPEARM1 magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < hlen {
        return Err(corrupt("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(format!("header: {e}")))?;
    let raw = &body[hlen..];
    if !raw.len().is_multiple_of(4) {
        return Err(corrupt("payload is not a whole number of floats"));
    }
    let payload: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if payload.iter().any(|v| !v.is_finite()) {
        return Err(corrupt("non-finite parameter"));
    }
    match header {
        Header::Gmm {
            label,
            gender,
            n_components: k,
            dim,
        } => {
            if k == 0 || dim == 0 || payload.len() != k * (1 + 2 * dim) {
                return Err(corrupt(format!(
                    "expected {} floats for {k} components of dim {dim}, found {}",
                    k * (1 + 2 * dim),
                    payload.len()
                )));
            }
            let weights = payload[..k].to_vec();
            let rows = |off: usize| -> Vec<Vec<f64>> {
                (0..k)
                    .map(|c| payload[off + c * dim..off + (c + 1) * dim].to_vec())
                    .collect()
            };
            let mut g = GmmModel::new(label, weights, rows(k), rows(k + k * dim))?;
            g.gender = gender;
            Ok(Model::Gmm(g))
        }
        Header::Tree { n_features, nodes } => {
            if nodes.is_empty() || payload.len() != nodes.len() {
                return Err(corrupt("tree payload does not match node count"));
            }
            let n = nodes.len();
            let nodes = nodes
                .into_iter()
                .zip(payload)
                .enumerate()
                .map(|(i, (shape, v))| match shape {
                    NodeShape::Split {
                        feature,
                        left,
                        right,
                    } => {
                        if left >= n || right >= n || left <= i || right <= i || feature >= n_features {
                            return Err(corrupt("tree node index out of range"));
                        }
                        Ok(TreeNode::Split {
                            feature,
                            threshold: v,
                            left,
                            right,
                        })
                    }
                    NodeShape::Leaf { class } => Ok(TreeNode::Leaf {
                        class,
                        confidence: v,
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Model::Tree(DecisionTreeModel { nodes, n_features }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_magic() {
        assert!(matches!(from_bytes(b"NOTMODEL\0\0\0\0"), Err(Error::CorruptModel(_))));
        assert!(from_bytes(b"").is_err());
    }
}
