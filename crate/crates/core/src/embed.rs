//! Input tokens: FPS region centers, KNN groups, EdgeConv features and
//! positional embeddings of the centers.

use crate::autodiff::{DiffError, NodeId, Scalar, Tensor};
use crate::config::ModelConfig;
use crate::geom::{self, dist2, GeomError, PointCloud};
use crate::nn::{Ctx, Initializer, Linear, Mlp};

/// Regions of a normalized cloud: centers picked by FPS and the
/// `k_group` nearest points around each.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRegions {
    pub centers: PointCloud,
    pub center_indices: Vec<usize>,
    /// Member indices into the source cloud, center first.
    pub groups: Vec<Vec<usize>>,
}

impl LocalRegions {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group_size(&self) -> usize {
        self.groups.first().map_or(0, Vec::len)
    }

    /// Source indices of all members, region by region.
    pub fn flat_members(&self) -> Vec<usize> {
        self.groups.iter().flatten().copied().collect()
    }

    /// For every member (in `flat_members` order), the rows of its
    /// `k` nearest fellow members, excluding itself. Groups of one point
    /// use the point itself as its only neighbor.
    pub fn edge_rows(&self, cloud: &PointCloud, k: usize) -> Vec<usize> {
        let size = self.group_size();
        let mut rows = Vec::with_capacity(self.len() * size * k);
        for (g, members) in self.groups.iter().enumerate() {
            let base = g * size;
            for (j, &mj) in members.iter().enumerate() {
                if size == 1 {
                    rows.extend(std::iter::repeat(base).take(k));
                    continue;
                }
                let p = cloud.points()[mj];
                let mut order: Vec<(f64, usize)> = members
                    .iter()
                    .enumerate()
                    .filter(|&(pos, _)| pos != j)
                    .map(|(pos, &m)| (dist2(&p, &cloud.points()[m]), pos))
                    .collect();
                order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for t in 0..k {
                    let pos = order[t.min(order.len() - 1)].1;
                    rows.push(base + pos);
                }
            }
        }
        rows
    }
}

pub fn build_regions(pp_n: &PointCloud, regions: usize, k_group: usize) -> Result<LocalRegions, GeomError> {
    let center_indices = geom::fps(pp_n, regions)?;
    let mut groups = Vec::with_capacity(regions);
    for &c in &center_indices {
        let mut g = geom::knn(pp_n, &pp_n.points()[c], k_group)?;
        match g.iter().position(|&i| i == c) {
            Some(pos) => {
                g.remove(pos);
            }
            None => {
                g.pop();
            }
        }
        g.insert(0, c);
        groups.push(g);
    }
    Ok(LocalRegions {
        centers: pp_n.select(&center_indices),
        center_indices,
        groups,
    })
}

pub(crate) fn cloud_tensor<T: Scalar>(pc: &PointCloud) -> Result<Tensor<T>, DiffError> {
    Tensor::new(&[pc.len(), 3], pc.flat().iter().map(|&v| T::of(v as f64)).collect())
}

/// Stacked EdgeConv layers over each region's member graph, max-pooled
/// over neighbors and then over members.
#[derive(Debug, Clone)]
pub struct EdgeConv {
    pub layers: Vec<Linear>,
    pub k_edge: usize,
}

impl EdgeConv {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut inp = 3;
        let layers = cfg
            .edge_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let l = Linear::new(format!("embed.edge{i}"), 2 * inp, w);
                inp = w;
                l
            })
            .collect();
        Self {
            layers,
            k_edge: cfg.edge_neighbors(),
        }
    }

    pub fn init(&self, init: &mut Initializer<'_>) {
        self.layers.iter().for_each(|l| l.init(init));
    }

    pub fn width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out)
    }

    /// Per-region features `[R, width]`.
    pub fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        regions: &LocalRegions,
        cloud: &PointCloud,
    ) -> Result<NodeId, DiffError> {
        let members = regions.flat_members();
        let coords = cloud_tensor::<T>(&cloud.select(&members))?;
        let mut h = ctx.graph.constant(coords)?;
        let k = self.k_edge;
        let nbr_rows = regions.edge_rows(cloud, k);
        let self_rows: Vec<usize> = (0..members.len()).flat_map(|r| std::iter::repeat(r).take(k)).collect();
        for layer in &self.layers {
            let x_j = ctx.graph.gather_rows(h, self_rows.clone())?;
            let x_m = ctx.graph.gather_rows(h, nbr_rows.clone())?;
            let offset = ctx.graph.sub(x_m, x_j)?;
            let edge = ctx.graph.concat_cols(x_j, offset)?;
            let z = layer.forward(ctx, edge)?;
            let z = ctx.graph.relu(z)?;
            h = ctx.graph.max_groups(z, k)?;
        }
        ctx.graph.max_groups(h, regions.group_size())
    }
}

/// Two-layer MLP on region centers.
#[derive(Debug, Clone)]
pub struct PositionalEmbedding {
    pub mlp: Mlp,
}

impl PositionalEmbedding {
    pub fn new(name: &str, hidden: usize, out: usize) -> Self {
        Self {
            mlp: Mlp::new(name, &[3, hidden, out]),
        }
    }

    pub fn init(&self, init: &mut Initializer<'_>) {
        self.mlp.init(init);
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, points: NodeId) -> Result<NodeId, DiffError> {
        self.mlp.forward(ctx, points)
    }
}

/// Embedding stage output.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub regions: LocalRegions,
    pub features: NodeId,
    pub positions: NodeId,
    pub tokens: NodeId,
}

#[derive(Debug, Clone)]
pub struct Embedder {
    pub regions: usize,
    pub k_group: usize,
    pub edge: EdgeConv,
    pub pe: PositionalEmbedding,
}

impl Embedder {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            regions: cfg.regions,
            k_group: cfg.k_group,
            edge: EdgeConv::new(cfg),
            pe: PositionalEmbedding::new("embed.pe", cfg.pe_hidden, cfg.pe_width),
        }
    }

    pub fn init(&self, init: &mut Initializer<'_>) {
        self.edge.init(init);
        self.pe.init(init);
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, pp_n: &PointCloud) -> Result<Embedded, crate::config::ModelError> {
        let regions = build_regions(pp_n, self.regions, self.k_group)?;
        let features = self.edge.forward(ctx, &regions, pp_n)?;
        let centers = ctx.graph.constant(cloud_tensor(&regions.centers)?)?;
        let positions = self.pe.forward(ctx, centers)?;
        let tokens = make_tokens(ctx, features, positions)?;
        Ok(Embedded {
            regions,
            features,
            positions,
            tokens,
        })
    }
}

/// Row-wise `[FE | PE]`.
pub fn make_tokens<T: Scalar>(ctx: &mut Ctx<'_, T>, fe: NodeId, pe: NodeId) -> Result<NodeId, DiffError> {
    ctx.graph.concat_cols(fe, pe)
}
