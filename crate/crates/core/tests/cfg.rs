use std::collections::BTreeSet;

use proptest::prelude::*;

use atomfix::cfg::{build_cfg, connected_regions, dataflow_dominators, lexicalize, ENTRY, EXIT};
use atomfix::corpus;
use atomfix::lang::{GuardId, Location};
use atomfix::pipeline::prepare;

/// Nodes reachable from `root` along `succ`, skipping `removed`.
fn reachable(n: usize, root: usize, succ: &[Vec<usize>], removed: Option<usize>) -> Vec<bool> {
    let mut seen = vec![false; n];
    if Some(root) == removed {
        return seen;
    }
    let mut stack = vec![root];
    seen[root] = true;
    while let Some(v) = stack.pop() {
        for &w in &succ[v] {
            if Some(w) != removed && !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

/// `d` dominates `v` iff `v` is unreachable once `d` is removed.
fn brute_force_dominators(n: usize, root: usize, succ: &[Vec<usize>]) -> Vec<BTreeSet<usize>> {
    let base = reachable(n, root, succ, None);
    let mut dom = vec![BTreeSet::new(); n];
    for d in 0..n {
        let without = reachable(n, root, succ, Some(d));
        for v in 0..n {
            if base[v] && (v == d || !without[v]) {
                dom[v].insert(d);
            }
        }
    }
    dom
}

fn graph() -> impl Strategy<Value = Vec<Vec<usize>>> {
    (2usize..=30).prop_flat_map(|n| {
        // A spanning chain keeps every node reachable from node 0; extra
        // random edges add branches, joins and back-edges.
        proptest::collection::vec((0..n, 0..n), 0..2 * n).prop_map(move |extra| {
            let mut succ = vec![Vec::new(); n];
            for v in 1..n {
                succ[v - 1].push(v);
            }
            for (a, b) in extra {
                if !succ[a].contains(&b) {
                    succ[a].push(b);
                }
            }
            succ
        })
    })
}

proptest! {
    #[test]
    fn dominators_match_the_removal_oracle(succ in graph()) {
        let n = succ.len();
        let mut pred = vec![Vec::new(); n];
        for (v, ws) in succ.iter().enumerate() {
            for &w in ws {
                pred[w].push(v);
            }
        }
        prop_assert_eq!(dataflow_dominators(n, 0, &pred), brute_force_dominators(n, 0, &succ));
    }
}

#[test]
fn corpus_dominators_match_the_removal_oracle() {
    for b in corpus::all() {
        let cfg = build_cfg(&prepare(&b.source).unwrap());
        for pc in &cfg.procs {
            let n = pc.nodes.len();
            assert_eq!(pc.dominators(), brute_force_dominators(n, ENTRY, &pc.succ));
            assert_eq!(
                pc.post_dominators(),
                brute_force_dominators(n, EXIT, &pc.pred)
            );
        }
    }
}

#[test]
fn every_node_is_reachable_and_reaches_the_exit() {
    for b in corpus::all() {
        let cfg = build_cfg(&prepare(&b.source).unwrap());
        for pc in &cfg.procs {
            let n = pc.nodes.len();
            assert!(reachable(n, ENTRY, &pc.succ, None).iter().all(|&r| r));
            assert!(reachable(n, EXIT, &pc.pred, None).iter().all(|&r| r));
        }
    }
}

/// All statement locations of the banking program's `transfer`.
fn transfer_locations() -> (atomfix::cfg::Cfg, Vec<Location>) {
    let cfg = build_cfg(&prepare(corpus::BANKING).unwrap());
    let pc = cfg.proc("transfer").unwrap().clone();
    let locs = (2..pc.nodes.len()).map(|n| pc.loc_of(n)).collect();
    (cfg, locs)
}

proptest! {
    #[test]
    fn regions_partition_their_input_maximally(mask in proptest::collection::vec(any::<bool>(), 16)) {
        let (cfg, locs) = transfer_locations();
        let s: BTreeSet<Location> = locs
            .iter()
            .zip(mask.iter().cycle())
            .filter(|(_, &m)| m)
            .map(|(l, _)| l.clone())
            .collect();
        let regions = connected_regions(&cfg, &s);
        let union: BTreeSet<Location> =
            regions.iter().flat_map(|r| r.locations.iter().cloned()).collect();
        prop_assert_eq!(&union, &s);
        let total: usize = regions.iter().map(|r| r.locations.len()).sum();
        prop_assert_eq!(total, s.len());
        for (i, a) in regions.iter().enumerate() {
            // Each region is itself connected.
            let own: BTreeSet<Location> = a.locations.iter().cloned().collect();
            prop_assert_eq!(connected_regions(&cfg, &own).len(), 1);
            for b in &regions[i + 1..] {
                let merged: BTreeSet<Location> =
                    own.iter().chain(&b.locations).cloned().collect();
                prop_assert_eq!(connected_regions(&cfg, &merged).len(), 2);
            }
        }
    }

    #[test]
    fn lexicalizing_grows_and_is_idempotent(mask in proptest::collection::vec(any::<bool>(), 16)) {
        let (cfg, locs) = transfer_locations();
        let s: BTreeSet<Location> = locs
            .iter()
            .zip(mask.iter().cycle())
            .filter(|(_, &m)| m)
            .map(|(l, _)| l.clone())
            .collect();
        for r in connected_regions(&cfg, &s) {
            let lex = lexicalize(&cfg, &r).unwrap();
            let before: BTreeSet<&Location> = r.locations.iter().collect();
            let after: BTreeSet<&Location> = lex.locations.iter().collect();
            prop_assert!(before.is_subset(&after));
            prop_assert!(lex.lexical.is_some());
            let again = lexicalize(&cfg, &lex).unwrap();
            prop_assert_eq!(&again.locations, &lex.locations);
        }
    }
}

#[test]
fn banking_strong_fix_gives_two_transfer_regions() {
    let p = prepare(corpus::BANKING).unwrap();
    let cfg = build_cfg(&p);
    let regions = cfg.regions_for(&BTreeSet::from([GuardId(2), GuardId(5)]));
    assert_eq!(regions.len(), 2);
    assert!(regions.iter().all(|r| r.proc == "transfer"));
    let lines: Vec<BTreeSet<usize>> = regions
        .iter()
        .map(|r| r.locations.iter().map(|l| l.line).collect())
        .collect();
    assert_eq!(
        lines,
        vec![BTreeSet::from([22, 23]), BTreeSet::from([26, 27, 28])]
    );
}

#[test]
fn lexicalizing_a_region_inside_the_if_stays_inside_it() {
    let p = prepare(corpus::BANKING).unwrap();
    let cfg = build_cfg(&p);
    let credit = cfg.regions_for(&BTreeSet::from([GuardId(5)]));
    assert_eq!(credit.len(), 1);
    let lex = lexicalize(&cfg, &credit[0]).unwrap();
    assert!(lex.locations.iter().all(|l| (26..=28).contains(&l.line)));
}

#[test]
fn dot_output_lists_every_procedure() {
    let cfg = build_cfg(&prepare(corpus::BANKING).unwrap());
    let dot = cfg.to_dot();
    assert!(dot.starts_with("digraph"));
    for name in ["transfer", "seize", "main"] {
        assert!(dot.contains(name), "{name}");
    }
}
