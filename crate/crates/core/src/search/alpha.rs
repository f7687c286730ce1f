use crate::arch::{CellSpec, CellType, Edge, Genotype, OpFamily, SearchSpaceSpec};
use crate::builder::{ActiveOps, AlphaParams};
use crate::tensor::softmax_slots;

use super::SearchError;

/// Cell DAG edges in (to, from) order, matching score row indexing.
fn edge_pairs(intermediates: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for node in 0..intermediates {
        let to = node + 2;
        for from in 0..to {
            pairs.push((to, from));
        }
    }
    pairs
}

/// Keep the `keep` strongest candidates per edge by softmax weight (ties to
/// the lower op index) and hand the next stage a zeroed score carryover.
pub fn prune_operations(
    alphas: &AlphaParams,
    active: &ActiveOps,
    keep: usize,
) -> Result<(ActiveOps, AlphaParams), SearchError> {
    if keep < 1 {
        return Err(SearchError::Config("pruning must keep at least one op per edge".into()));
    }
    let n_ops = alphas
        .causal
        .first()
        .map(|r| r.len())
        .ok_or_else(|| SearchError::Config("empty score table".into()))?;
    let prune_bank =
        |rows: &[Vec<f64>], lists: &[Vec<usize>]| -> Result<Vec<Vec<usize>>, SearchError> {
            lists
                .iter()
                .zip(rows)
                .map(|(list, row)| {
                    if keep > list.len() {
                        return Err(SearchError::Config(format!(
                            "cannot keep {keep} of {} candidates",
                            list.len()
                        )));
                    }
                    let w = softmax_slots(row, list);
                    let mut order: Vec<usize> = (0..list.len()).collect();
                    order.sort_by(|&a, &b| {
                        w[b].partial_cmp(&w[a]).unwrap().then(list[a].cmp(&list[b]))
                    });
                    let mut kept: Vec<usize> = order[..keep].iter().map(|&i| list[i]).collect();
                    kept.sort_unstable();
                    Ok(kept)
                })
                .collect()
        };
    let next = ActiveOps {
        causal: prune_bank(&alphas.causal, &active.causal)?,
        reduce: prune_bank(&alphas.reduce, &active.reduce)?,
    };
    Ok((next, AlphaParams::zeros(alphas.causal.len(), n_ops)))
}

/// Strongest non-zero candidate on one edge: (softmax weight, global op
/// index), ties to the lower index. The zero op never competes here.
fn best_nonzero(row: &[f64], list: &[usize]) -> Option<(f64, usize)> {
    let w = softmax_slots(row, list);
    let mut best: Option<(f64, usize)> = None;
    for (i, &oi) in list.iter().enumerate() {
        if oi == 0 {
            continue;
        }
        if best.map_or(true, |(bw, _)| w[i] > bw) {
            best = Some((w[i], oi));
        }
    }
    best
}

/// Collapse final-stage scores into a discrete cell pattern: each node keeps
/// the `retain_k` incoming edges whose best non-zero op is strongest, ties
/// by lower edge index then lower op index.
pub fn discretize(
    alphas: &AlphaParams,
    active: &ActiveOps,
    space: &SearchSpaceSpec,
) -> Result<Genotype, SearchError> {
    let ic = space.intermediate_count as usize;
    let retain_k = space.retain_k as usize;
    let mut cells = Vec::new();
    for (ct, rows, lists) in [
        (CellType::Causal, &alphas.causal, &active.causal),
        (CellType::Reduction, &alphas.reduce, &active.reduce),
    ] {
        if rows.len() != space.edge_count() || lists.len() != space.edge_count() {
            return Err(SearchError::Config(format!(
                "score table rows {} do not cover the {} edges of the cell",
                rows.len(),
                space.edge_count()
            )));
        }
        let causal = ct == CellType::Causal;
        let mut edges = Vec::new();
        let mut e = 0usize;
        for node in 0..ic {
            let to = node + 2;
            let mut scored: Vec<(f64, usize, usize, usize)> = Vec::new();
            for from in 0..to {
                let (weight, op) = best_nonzero(&rows[e], &lists[e]).ok_or_else(|| {
                    SearchError::Config(format!("edge {e} retains no non-zero candidate"))
                })?;
                scored.push((weight, e, from, op));
                e += 1;
            }
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut picked: Vec<(usize, usize)> =
                scored.iter().take(retain_k).map(|&(_, _, from, op)| (from, op)).collect();
            picked.sort_unstable();
            for (from, op) in picked {
                edges.push(Edge { from, to, op: space.operations[op].with_causal(causal) });
            }
        }
        cells.push(CellSpec::new(ct, edges));
    }
    let reduction = cells.pop().expect("two cells");
    let causal = cells.pop().expect("two cells");
    Ok(Genotype::new(space.name, causal, reduction))
}

/// Cap average pooling in the causal cell: repeatedly demote the weakest
/// avg-pool edge to its next-strongest non-zero, non-avg-pool candidate.
pub fn enforce_pool_cap(
    g: &Genotype,
    alphas: &AlphaParams,
    active: &ActiveOps,
    space: &SearchSpaceSpec,
    cap: usize,
) -> Result<Genotype, SearchError> {
    let pairs = edge_pairs(space.intermediate_count as usize);
    let mut out = g.clone();
    loop {
        // (softmax weight of the avg-pool op, edge index, position in edges)
        let mut pools: Vec<(f64, usize, usize)> = Vec::new();
        for (pos, edge) in out.causal_cell.edges.iter().enumerate() {
            if edge.op.family != OpFamily::AvgPool {
                continue;
            }
            let e = pairs
                .iter()
                .position(|&(to, from)| to == edge.to && from == edge.from)
                .ok_or_else(|| {
                    SearchError::Config(format!(
                        "edge {} -> {} is not part of the cell DAG",
                        edge.from, edge.to
                    ))
                })?;
            let base = edge.op.with_causal(false);
            let oi = space.op_index(&base).ok_or_else(|| {
                SearchError::Config(format!("op {} is not in the space", base.name()))
            })?;
            let list = &active.causal[e];
            let slot = list.iter().position(|&x| x == oi).ok_or_else(|| {
                SearchError::Config(format!("op {} was pruned from edge {e}", base.name()))
            })?;
            let w = softmax_slots(&alphas.causal[e], list);
            pools.push((w[slot], e, pos));
        }
        if pools.len() <= cap {
            return Ok(out);
        }
        pools.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let (_, e, pos) = pools[0];
        let list = &active.causal[e];
        let w = softmax_slots(&alphas.causal[e], list);
        let mut repl: Option<(f64, usize)> = None;
        for (i, &oi) in list.iter().enumerate() {
            if oi == 0 || space.operations[oi].family == OpFamily::AvgPool {
                continue;
            }
            if repl.map_or(true, |(bw, _)| w[i] > bw) {
                repl = Some((w[i], oi));
            }
        }
        let (_, oi) = repl.ok_or_else(|| {
            SearchError::Config(format!("edge {e} has no non-pooling replacement candidate"))
        })?;
        out.causal_cell.edges[pos].op = space.operations[oi].with_causal(true);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::validate_genotype;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn space() -> SearchSpaceSpec {
        SearchSpaceSpec::low_latency()
    }

    fn random_alphas(rng: &mut ChaCha20Rng, edges: usize, ops: usize) -> AlphaParams {
        let mut a = AlphaParams::zeros(edges, ops);
        for bank in [&mut a.causal, &mut a.reduce] {
            for row in bank.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.random_range(-2.0..2.0);
                }
            }
        }
        a
    }

    #[test]
    fn keeping_everything_is_identity() {
        let sp = space();
        let active = ActiveOps::full(&sp);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let alphas = random_alphas(&mut rng, sp.edge_count(), sp.operations.len());
        let (next, carry) = prune_operations(&alphas, &active, sp.operations.len()).unwrap();
        assert_eq!(next, active);
        assert_eq!(carry, AlphaParams::zeros(sp.edge_count(), sp.operations.len()));
    }

    #[test]
    fn constructed_top_three_survive() {
        let sp = space();
        let active = ActiveOps::full(&sp);
        let mut alphas = AlphaParams::zeros(sp.edge_count(), sp.operations.len());
        // Edge 0 of the causal bank: clear favorites at ops 2, 5, 7.
        alphas.causal[0][2] = 4.0;
        alphas.causal[0][5] = 3.0;
        alphas.causal[0][7] = 2.5;
        let (next, _) = prune_operations(&alphas, &active, 3).unwrap();
        assert_eq!(next.causal[0], vec![2, 5, 7]);
        // Untouched rows tie everywhere; lowest indices win.
        assert_eq!(next.causal[1], vec![0, 1, 2]);
        assert_eq!(next.reduce[0], vec![0, 1, 2]);
    }

    #[test]
    fn pruning_matches_a_sort_oracle() {
        let sp = space();
        let active = ActiveOps::full(&sp);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for keep in [2usize, 5] {
            for _ in 0..25 {
                let alphas = random_alphas(&mut rng, sp.edge_count(), sp.operations.len());
                let (next, _) = prune_operations(&alphas, &active, keep).unwrap();
                for (rows, lists) in
                    [(&alphas.causal, &next.causal), (&alphas.reduce, &next.reduce)]
                {
                    for (row, kept) in rows.iter().zip(lists) {
                        // Independent oracle: exact softmax, descending sort.
                        let exp: Vec<f64> = row.iter().map(|a| a.exp()).collect();
                        let z: f64 = exp.iter().sum();
                        let mut order: Vec<usize> = (0..row.len()).collect();
                        order.sort_by(|&a, &b| {
                            (exp[b] / z).partial_cmp(&(exp[a] / z)).unwrap().then(a.cmp(&b))
                        });
                        let mut want = order[..keep].to_vec();
                        want.sort_unstable();
                        assert_eq!(kept, &want);
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_keep_counts_are_rejected() {
        let sp = space();
        let active = ActiveOps::full(&sp);
        let alphas = AlphaParams::zeros(sp.edge_count(), sp.operations.len());
        assert!(prune_operations(&alphas, &active, 0).is_err());
        assert!(prune_operations(&alphas, &active, sp.operations.len() + 1).is_err());
    }

    #[test]
    fn uniform_scores_discretize_to_the_documented_tie_break() {
        let sp = space();
        let active = ActiveOps::full(&sp);
        let alphas = AlphaParams::zeros(sp.edge_count(), sp.operations.len());
        let g = discretize(&alphas, &active, &sp).unwrap();
        for cell in [&g.causal_cell, &g.reduction_cell] {
            for node in 0..sp.intermediate_count as usize {
                let to = node + 2;
                let incoming: Vec<_> = cell.sorted_edges().into_iter().filter(|e| e.to == to).collect();
                let froms: Vec<usize> = incoming.iter().map(|e| e.from).collect();
                assert_eq!(froms, vec![0, 1], "node {to} of {:?}", cell.cell_type);
                for e in incoming {
                    assert_eq!(
                        e.op.with_causal(false),
                        sp.operations[1],
                        "expected the first non-zero op"
                    );
                }
            }
        }
        assert!(validate_genotype(&g, &sp).unwrap().is_valid());
    }

    #[test]
    fn zero_dominance_never_selects_zero() {
        let sp = space();
        let active = ActiveOps::full(&sp);
        let mut alphas = AlphaParams::zeros(sp.edge_count(), sp.operations.len());
        for bank in [&mut alphas.causal, &mut alphas.reduce] {
            for row in bank.iter_mut() {
                row[0] = 9.0; // zero op towers over everything
                row[3] = 0.5; // best non-zero
            }
        }
        let g = discretize(&alphas, &active, &sp).unwrap();
        for cell in [&g.causal_cell, &g.reduction_cell] {
            for e in &cell.edges {
                assert_eq!(e.op.with_causal(false), sp.operations[3]);
            }
        }
    }

    #[test]
    fn discretize_matches_exhaustive_pair_enumeration() {
        let sp = space();
        let active = ActiveOps::full(&sp);
        let ic = sp.intermediate_count as usize;
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        for _ in 0..50 {
            let alphas = random_alphas(&mut rng, sp.edge_count(), sp.operations.len());
            let g = discretize(&alphas, &active, &sp).unwrap();
            for (cell, rows, lists) in [
                (&g.causal_cell, &alphas.causal, &active.causal),
                (&g.reduction_cell, &alphas.reduce, &active.reduce),
            ] {
                let mut e_base = 0usize;
                for node in 0..ic {
                    let to = node + 2;
                    // Oracle: score every predecessor, try every pair.
                    let scores: Vec<(f64, usize)> = (0..to)
                        .map(|from| {
                            best_nonzero(&rows[e_base + from], &lists[e_base + from]).unwrap()
                        })
                        .collect();
                    let mut best_pair = (0usize, 1usize);
                    let mut best_sum = f64::NEG_INFINITY;
                    for a in 0..to {
                        for b in a + 1..to {
                            let sum = scores[a].0 + scores[b].0;
                            if sum > best_sum {
                                best_sum = sum;
                                best_pair = (a, b);
                            }
                        }
                    }
                    let picked: Vec<_> =
                        cell.sorted_edges().into_iter().filter(|e| e.to == to).collect();
                    let froms: Vec<usize> = picked.iter().map(|e| e.from).collect();
                    assert_eq!(froms, vec![best_pair.0, best_pair.1]);
                    for e in picked {
                        let (_, oi) = scores[e.from];
                        assert_eq!(e.op.with_causal(false), sp.operations[oi]);
                    }
                    e_base += to;
                }
            }
        }
    }

    fn pool_heavy_fixture(n_pools: usize) -> (SearchSpaceSpec, Genotype, AlphaParams, ActiveOps) {
        let sp = space();
        let active = ActiveOps::full(&sp);
        let mut alphas = AlphaParams::zeros(sp.edge_count(), sp.operations.len());
        let avg = sp
            .operations
            .iter()
            .position(|o| o.family == OpFamily::AvgPool)
            .expect("avg pool in space");
        // Node i takes edges from inputs 0 and 1; the first n_pools of those
        // edges are avg pool with distinct strengths, the rest max pool.
        let pairs = edge_pairs(sp.intermediate_count as usize);
        let mut edges = Vec::new();
        let mut placed = 0usize;
        for node in 0..sp.intermediate_count as usize {
            let to = node + 2;
            for from in [0usize, 1] {
                let e = pairs.iter().position(|&p| p == (to, from)).unwrap();
                let op = if placed < n_pools {
                    alphas.causal[e][avg] = 1.0 + placed as f64; // strictly increasing strength
                    sp.operations[avg]
                } else {
                    sp.operations[1]
                };
                edges.push(Edge { from, to, op: op.with_causal(true) });
                placed += 1;
            }
        }
        let causal = CellSpec::new(CellType::Causal, edges.clone());
        let reduction = CellSpec::new(
            CellType::Reduction,
            edges
                .iter()
                .map(|e| Edge { from: e.from, to: e.to, op: sp.operations[1].with_causal(false) })
                .collect(),
        );
        (sp.clone(), Genotype::new(sp.name, causal, reduction), alphas, active)
    }

    #[test]
    fn pool_cap_leaves_compliant_cells_untouched() {
        for n in [0usize, 2] {
            let (sp, g, alphas, active) = pool_heavy_fixture(n);
            let out = enforce_pool_cap(&g, &alphas, &active, &sp, 2).unwrap();
            assert_eq!(out, g);
        }
    }

    #[test]
    fn pool_cap_demotes_the_weakest_pools_and_is_idempotent() {
        let (sp, g, alphas, active) = pool_heavy_fixture(4);
        let out = enforce_pool_cap(&g, &alphas, &active, &sp, 2).unwrap();
        let pools: Vec<bool> = out
            .causal_cell
            .edges
            .iter()
            .map(|e| e.op.family == OpFamily::AvgPool)
            .collect();
        // Strengths increase with placement order, so the two earliest
        // pools are the weakest and get replaced.
        assert_eq!(pools, vec![false, false, true, true, false, false, false, false]);
        for e in &out.causal_cell.edges {
            if e.op.family != OpFamily::AvgPool {
                assert!(e.op.causal);
                assert_ne!(e.op.family, OpFamily::Zero);
            }
        }
        let again = enforce_pool_cap(&out, &alphas, &active, &sp, 2).unwrap();
        assert_eq!(again, out);
        assert!(validate_genotype(&out, &sp).unwrap().is_valid());
    }
}
