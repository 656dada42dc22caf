use super::graph::{Graph, NodeId};
use super::{NumError, Result};

/// Projection set for one multi-head self-attention layer, already bound
/// into a graph. Query/key/value biases are present iff the layer uses them.
#[derive(Debug, Clone, Copy)]
pub struct AttentionNodes {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
    pub bq: Option<NodeId>,
    pub bk: Option<NodeId>,
    pub bv: Option<NodeId>,
    pub bo: NodeId,
}

/// `x @ w + b` with an optional broadcast bias row.
pub fn linear(g: &mut Graph, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
    let y = g.matmul(x, w)?;
    match b {
        Some(b) => g.add_row(y, b),
        None => Ok(y),
    }
}

/// Standard scaled dot-product multi-head self-attention over a token
/// matrix `x: [n, d]`, with per-head scaling `1/sqrt(d/heads)` and a final
/// output projection. Differentiable end to end.
pub fn multi_head_attention(
    g: &mut Graph,
    x: NodeId,
    w: &AttentionNodes,
    heads: usize,
) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    let (_n, d) = match shape[..] {
        [n, d] => (n, d),
        ref s => {
            return Err(NumError::ShapeMismatch {
                op: "multi_head_attention",
                detail: format!("expected [n, d] tokens, got {:?}", s),
            })
        }
    };
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(NumError::InvalidArgument {
            op: "multi_head_attention",
            detail: format!("model dim {d} not divisible by {heads} heads"),
        });
    }
    let head_dim = d / heads;
    let scaling = 1.0 / (head_dim as f64).sqrt();

    let q = linear(g, x, w.wq, w.bq)?;
    let k = linear(g, x, w.wk, w.bk)?;
    let v = linear(g, x, w.wv, w.bv)?;

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * head_dim, head_dim)?;
        let kh = g.slice_cols(k, h * head_dim, head_dim)?;
        let vh = g.slice_cols(v, h * head_dim, head_dim)?;
        let kh_t = g.transpose(kh)?;
        let scores = g.matmul(qh, kh_t)?;
        let scores = g.scale(scores, scaling)?;
        let attn = g.softmax_rows(scores)?;
        head_outputs.push(g.matmul(attn, vh)?);
    }
    let concat = g.concat_cols(&head_outputs)?;
    linear(g, concat, w.wo, Some(w.bo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn bind(g: &mut Graph, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        g.constant(&Tensor::new(shape, data).unwrap())
    }

    fn eye(n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        v
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut g = Graph::new();
        let d = 4;
        let x = bind(&mut g, vec![2, d], vec![0.1; 2 * d]);
        let w = AttentionNodes {
            wq: bind(&mut g, vec![d, d], eye(d)),
            wk: bind(&mut g, vec![d, d], eye(d)),
            wv: bind(&mut g, vec![d, d], eye(d)),
            wo: bind(&mut g, vec![d, d], eye(d)),
            bq: None,
            bk: None,
            bv: None,
            bo: bind(&mut g, vec![1, d], vec![0.0; d]),
        };
        assert!(multi_head_attention(&mut g, x, &w, 3).is_err());
    }

    #[test]
    fn single_token_passes_through_value_chain() {
        // With one token the softmax weight is 1, so the output is
        // (x @ wv + bv) @ wo + bo regardless of q/k.
        let mut g = Graph::new();
        let d = 4;
        let x_data = vec![0.3, -0.7, 1.1, 0.2];
        let x = bind(&mut g, vec![1, d], x_data.clone());
        let wv_data: Vec<f64> = (0..d * d).map(|i| ((i as f64) * 0.37).sin()).collect();
        let wo_data: Vec<f64> = (0..d * d).map(|i| ((i as f64) * 0.53).cos()).collect();
        let bv_data = vec![0.1, 0.2, -0.3, 0.4];
        let bo_data = vec![-0.05, 0.0, 0.05, 0.1];
        let w = AttentionNodes {
            wq: bind(&mut g, vec![d, d], eye(d)),
            wk: bind(&mut g, vec![d, d], eye(d)),
            wv: bind(&mut g, vec![d, d], wv_data.clone()),
            wo: bind(&mut g, vec![d, d], wo_data.clone()),
            bq: None,
            bk: None,
            bv: Some(bind(&mut g, vec![1, d], bv_data.clone())),
            bo: bind(&mut g, vec![1, d], bo_data.clone()),
        };
        let out = multi_head_attention(&mut g, x, &w, 2).unwrap();

        // Hand-computed value chain.
        let mut v = bv_data.clone();
        for j in 0..d {
            for i in 0..d {
                v[j] += x_data[i] * wv_data[i * d + j];
            }
        }
        let mut expect = bo_data.clone();
        for j in 0..d {
            for i in 0..d {
                expect[j] += v[i] * wo_data[i * d + j];
            }
        }
        for (got, want) in g.value(out).iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn zero_query_projection_averages_values() {
        // wq = 0 makes every attention row uniform, so with identity value
        // and output projections each output row is the mean of the rows.
        let mut g = Graph::new();
        let (n, d) = (3, 4);
        let x_data: Vec<f64> = (0..n * d).map(|i| ((i as f64) * 0.91).sin()).collect();
        let x = bind(&mut g, vec![n, d], x_data.clone());
        let w = AttentionNodes {
            wq: bind(&mut g, vec![d, d], vec![0.0; d * d]),
            wk: bind(&mut g, vec![d, d], eye(d)),
            wv: bind(&mut g, vec![d, d], eye(d)),
            wo: bind(&mut g, vec![d, d], eye(d)),
            bq: None,
            bk: None,
            bv: None,
            bo: bind(&mut g, vec![1, d], vec![0.0; d]),
        };
        let out = multi_head_attention(&mut g, x, &w, 2).unwrap();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                mean[j] += x_data[i * d + j] / n as f64;
            }
        }
        let v = g.value(out);
        for i in 0..n {
            for j in 0..d {
                assert!((v[i * d + j] - mean[j]).abs() < 1e-12);
            }
        }
    }
}
