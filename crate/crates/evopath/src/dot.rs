//! Graphviz export of the pool: one node per distinct layer instance,
//! grouped by the scenario that created it, with one edge set per
//! scenario path.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use evopath_core::{BlockId, ComponentKind, KnowledgePool, Layer, Scope};

const PALETTE: [&str; 8] = [
    "#d9d9d9", "#8dd3c7", "#ffffb3", "#bebada", "#fb8072", "#80b1d3", "#fdb462", "#b3de69",
];

type Key = (Option<ComponentKind>, Vec<BlockId>);

fn key(kind: Option<ComponentKind>, layer: &Layer) -> Key {
    (kind, layer.params().iter().map(|p| p.id()).collect())
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn lineage_dot(pool: &KnowledgePool) -> String {
    let mut layers: BTreeMap<Key, &Layer> = BTreeMap::new();
    let mut paths: Vec<(&Scope, Vec<Key>)> = Vec::new();
    for r in pool.records() {
        let mut path = Vec::new();
        for c in r.model.components() {
            for l in c.layers() {
                let k = key(Some(c.kind()), l);
                layers.entry(k.clone()).or_insert(l);
                path.push(k);
            }
        }
        let k = key(None, r.model.head());
        layers.entry(k.clone()).or_insert(r.model.head());
        path.push(k);
        paths.push((r.scope(), path));
    }

    let node: BTreeMap<&Key, usize> = layers.keys().enumerate().map(|(i, k)| (k, i)).collect();
    let mut clusters: BTreeMap<Scope, Vec<(&Key, &Layer)>> = BTreeMap::new();
    for (k, l) in &layers {
        let scope = l.params().first().map_or(Scope::Meta, |p| p.origin().scope.clone());
        clusters.entry(scope).or_default().push((k, l));
    }
    let color: BTreeMap<&Scope, &str> = clusters
        .keys()
        .enumerate()
        .map(|(i, s)| (s, PALETTE[i % PALETTE.len()]))
        .collect();

    let mut out = String::from("digraph lineage {\n  rankdir=LR;\n  node [shape=box, style=filled];\n");
    for (ci, (scope, members)) in clusters.iter().enumerate() {
        let _ = writeln!(out, "  subgraph cluster_{ci} {{");
        let _ = writeln!(out, "    label=\"{}\";", escape(scope.name()));
        for (k, l) in members {
            let tag = k.0.map_or("head", ComponentKind::tag);
            let generation = l.params().first().map_or(0, |p| p.origin().generation);
            let _ = writeln!(
                out,
                "    n{} [label=\"{} {} {}->{}\\n{} g{}\", fillcolor=\"{}\"];",
                node[k],
                tag,
                l.kind().name(),
                l.input_width(),
                l.output_width(),
                escape(scope.name()),
                generation,
                color[scope],
            );
        }
        out.push_str("  }\n");
    }

    let mut edges = BTreeSet::new();
    for (scope, path) in &paths {
        for w in path.windows(2) {
            edges.insert((node[&w[0]], node[&w[1]], *scope));
        }
    }
    for (a, b, scope) in edges {
        let _ = writeln!(
            out,
            "  n{a} -> n{b} [label=\"{}\", color=\"{}\"];",
            escape(scope.name()),
            color.get(scope).copied().unwrap_or("black"),
        );
    }
    out.push_str("}\n");
    out
}
