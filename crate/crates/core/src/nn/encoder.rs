use rand::Rng;

use super::{Builder, Dense, Forward, ModelConfig, NnError};
use crate::autodiff::{ParamId, Var};
use crate::graph::{GraphError, SceneGraph, Vocab};

/// One message-passing round: every edge `(s, r, o)` maps the concatenation
/// `(v_s, v_r, v_o)` to candidate updates for all three.
#[derive(Debug, Clone)]
struct GcnLayer {
    edge_hidden: Dense,
    edge_out: Dense,
    self_loop: Dense,
}

/// Graph-convolutional scene graph encoder.
#[derive(Debug, Clone)]
pub struct Encoder {
    class_table: ParamId,
    relation_table: ParamId,
    layers: Vec<GcnLayer>,
    out: Dense,
    dim: usize,
}

impl Encoder {
    pub fn new<R: Rng>(b: &mut Builder<R>, cfg: &ModelConfig, vocab: &Vocab) -> Self {
        let d = cfg.embedding_dim;
        let class_table = b.normal("enc.class_table".into(), &[vocab.num_classes(), d], 1.0);
        let relation_table = b.normal("enc.relation_table".into(), &[vocab.num_relations(), d], 1.0);
        let layers = (0..cfg.gcn_layers)
            .map(|l| GcnLayer {
                edge_hidden: b.dense(&format!("enc.gcn{l}.edge_hidden"), 3 * d, cfg.gcn_hidden),
                edge_out: b.dense(&format!("enc.gcn{l}.edge_out"), cfg.gcn_hidden, 3 * d),
                self_loop: b.dense(&format!("enc.gcn{l}.self"), d, d),
            })
            .collect();
        let out = b.dense("enc.out", d, d);
        Encoder { class_table, relation_table, layers, out, dim: d }
    }

    pub fn output_layer(&self) -> Dense {
        self.out
    }

    /// Embeddings `[n, d]` for the real objects of a dummy-augmented graph.
    pub fn forward(&self, f: &mut Forward, g: &SceneGraph) -> Result<Var, NnError> {
        if !g.dummy {
            return Err(GraphError::NotAugmented.into());
        }
        let nodes = g.num_nodes();
        let d = self.dim;
        let classes = f.bind(self.class_table);
        let relations = f.bind(self.relation_table);
        let mut v = f.tape.gather(classes, &g.classes);
        let rel_index: Vec<usize> = g.edges.iter().map(|e| e.rel).collect();
        let mut r = f.tape.gather(relations, &rel_index);
        let src: Vec<usize> = g.edges.iter().map(|e| e.src).collect();
        let dst: Vec<usize> = g.edges.iter().map(|e| e.dst).collect();

        let mut degree = vec![1.0; nodes];
        for e in &g.edges {
            degree[e.src] += 1.0;
            degree[e.dst] += 1.0;
        }
        let self_scale: Vec<f64> = degree.iter().map(|c| 1.0 / c).collect();
        let src_scale: Vec<f64> = src.iter().map(|&i| self_scale[i]).collect();
        let dst_scale: Vec<f64> = dst.iter().map(|&i| self_scale[i]).collect();
        let all_nodes: Vec<usize> = (0..nodes).collect();

        for layer in &self.layers {
            let vs = f.tape.gather(v, &src);
            let vo = f.tape.gather(v, &dst);
            let triple = f.tape.concat(&[vs, r, vo]);
            let hidden = layer.edge_hidden.forward(f, triple);
            let hidden = f.tape.relu(hidden);
            let cand = layer.edge_out.forward(f, hidden);
            let cand_s = f.tape.slice(cand, 0, d);
            let cand_r = f.tape.slice(cand, d, d);
            let cand_o = f.tape.slice(cand, 2 * d, d);

            let own = layer.self_loop.forward(f, v);
            let own = f.tape.index_add(own, &all_nodes, &self_scale, nodes);
            let from_s = f.tape.index_add(cand_s, &src, &src_scale, nodes);
            let from_o = f.tape.index_add(cand_o, &dst, &dst_scale, nodes);
            let sum = f.tape.add(own, from_s);
            let sum = f.tape.add(sum, from_o);
            v = f.tape.relu(sum);
            r = f.tape.relu(cand_r);
        }
        let out = self.out.forward(f, v);
        let real: Vec<usize> = (0..g.num_objects()).collect();
        Ok(f.tape.gather(out, &real))
    }
}
