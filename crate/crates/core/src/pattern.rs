//! Attention sparsity patterns.
//!
//! A pattern answers "does query `i` attend to key `j`" for a sequence of
//! length `n`. Windowed patterns attend within `half_width * dilation`
//! positions on each side at stride `dilation`; global positions attend to
//! and are attended by everything.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Full,
    Window,
    /// Window plus global attention on position 0.
    Longformer,
    /// Window plus seeded random global positions.
    BigBird,
    /// Window plus caller-supplied global positions.
    Egad,
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(PatternKind::Full),
            "window" => Ok(PatternKind::Window),
            "longformer" => Ok(PatternKind::Longformer),
            "bigbird" => Ok(PatternKind::BigBird),
            "egad" => Ok(PatternKind::Egad),
            other => Err(Error::validation(format!("unknown pattern kind `{other}`"))),
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatternKind::Full => "full",
            PatternKind::Window => "window",
            PatternKind::Longformer => "longformer",
            PatternKind::BigBird => "bigbird",
            PatternKind::Egad => "egad",
        })
    }
}

/// Parameters for [`build_pattern`]. `globals` is only read for
/// [`PatternKind::Egad`]; `random_globals` and `seed` only for
/// [`PatternKind::BigBird`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternSpec {
    pub kind: PatternKind,
    pub n: usize,
    pub half_width: usize,
    pub dilation: usize,
    pub globals: Vec<usize>,
    pub random_globals: usize,
    pub seed: u64,
}

impl PatternSpec {
    pub fn new(kind: PatternKind, n: usize, half_width: usize) -> Self {
        PatternSpec {
            kind,
            n,
            half_width,
            dilation: 1,
            globals: Vec::new(),
            random_globals: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionPattern {
    kind: PatternKind,
    n: usize,
    half_width: usize,
    dilation: usize,
    is_global: Vec<bool>,
}

pub fn build_pattern(spec: &PatternSpec) -> Result<AttentionPattern> {
    if spec.n == 0 {
        return Err(Error::validation("pattern length must be at least 1"));
    }
    if spec.dilation == 0 {
        return Err(Error::validation("dilation must be at least 1"));
    }
    let globals: Vec<usize> = match spec.kind {
        PatternKind::Full | PatternKind::Window => Vec::new(),
        PatternKind::Longformer => vec![0],
        PatternKind::BigBird => {
            if spec.random_globals > spec.n {
                return Err(Error::validation(format!(
                    "{} random globals requested for length {}",
                    spec.random_globals, spec.n
                )));
            }
            let mut rng = seed::rng(spec.seed);
            index::sample(&mut rng, spec.n, spec.random_globals).into_vec()
        }
        PatternKind::Egad => spec.globals.clone(),
    };
    AttentionPattern::windowed(spec.n, spec.half_width, spec.dilation, &globals)
        .map(|p| AttentionPattern { kind: spec.kind, ..p })
}

impl AttentionPattern {
    /// Window pattern with the given global positions.
    pub fn windowed(
        n: usize,
        half_width: usize,
        dilation: usize,
        globals: &[usize],
    ) -> Result<Self> {
        if dilation == 0 {
            return Err(Error::validation("dilation must be at least 1"));
        }
        let mut is_global = vec![false; n];
        for &g in globals {
            if g >= n {
                return Err(Error::validation(format!(
                    "global index {g} out of range for length {n}"
                )));
            }
            is_global[g] = true;
        }
        Ok(AttentionPattern {
            kind: PatternKind::Egad,
            n,
            half_width,
            dilation,
            is_global,
        })
    }

    pub fn full(n: usize) -> Self {
        AttentionPattern {
            kind: PatternKind::Full,
            n,
            half_width: n,
            dilation: 1,
            is_global: vec![false; n],
        }
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn globals(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.is_global[i]).collect()
    }

    pub fn is_global(&self, i: usize) -> bool {
        self.is_global[i]
    }

    fn in_window(&self, i: usize, j: usize) -> bool {
        let dist = i.abs_diff(j);
        dist <= self.half_width * self.dilation && dist.is_multiple_of(self.dilation)
    }

    pub fn is_attended(&self, i: usize, j: usize) -> bool {
        debug_assert!(i < self.n && j < self.n);
        self.kind == PatternKind::Full
            || self.is_global[i]
            || self.is_global[j]
            || self.in_window(i, j)
    }

    /// Keys attended by query `i`, ascending. Cost is proportional to the
    /// window plus the number of globals, except for global rows.
    pub fn row_keys(&self, i: usize) -> Vec<usize> {
        if self.kind == PatternKind::Full || self.is_global[i] {
            return (0..self.n).collect();
        }
        let reach = self.half_width * self.dilation;
        let lo = i.saturating_sub(reach);
        let hi = (i + reach).min(self.n - 1);
        let mut keys: Vec<usize> = (lo..=hi)
            .filter(|&j| self.is_global[j] || (i.abs_diff(j)) % self.dilation == 0)
            .collect();
        keys.extend((0..lo).chain(hi + 1..self.n).filter(|&j| self.is_global[j]));
        keys.sort_unstable();
        keys
    }

    pub fn pair_count(&self) -> usize {
        (0..self.n).map(|i| self.row_keys(i).len()).sum()
    }

    /// Minimum number of attention layers for information at key `j` to reach
    /// query `i`, for every pair, capped at `layers`.
    pub fn reachability(&self, layers: usize) -> Reachability {
        let n = self.n;
        // Forward adjacency: j -> i when i attends to j.
        let mut out_edges = vec![Vec::new(); n];
        for i in 0..n {
            for j in self.row_keys(i) {
                out_edges[j].push(i);
            }
        }
        let mut hops = vec![None; n * n];
        let mut queue = VecDeque::new();
        for source in 0..n {
            hops[source * n + source] = Some(0);
            queue.clear();
            queue.push_back(source);
            while let Some(u) = queue.pop_front() {
                let d = hops[u * n + source].expect("queued nodes are labelled");
                if d == layers {
                    continue;
                }
                for &v in &out_edges[u] {
                    if hops[v * n + source].is_none() {
                        hops[v * n + source] = Some(d + 1);
                        queue.push_back(v);
                    }
                }
            }
        }
        Reachability { n, hops }
    }

    /// Writes the mask as an ASCII PGM (P2). Attended cells are 0, others 255;
    /// row `i` is query `i`.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.n, self.n);
        for i in 0..self.n {
            let row: Vec<&str> = (0..self.n)
                .map(|j| if self.is_attended(i, j) { "0" } else { "255" })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn export_mask(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Min-hop matrix from [`AttentionPattern::reachability`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reachability {
    n: usize,
    hops: Vec<Option<usize>>,
}

impl Reachability {
    /// Hops for information at `key` to reach `query`; `None` if not reachable
    /// within the layer cap.
    pub fn hops(&self, query: usize, key: usize) -> Option<usize> {
        self.hops[query * self.n + key]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn max_hops(&self) -> Option<usize> {
        self.hops.iter().copied().collect::<Option<Vec<_>>>()?.into_iter().max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window(n: usize, h: usize) -> AttentionPattern {
        build_pattern(&PatternSpec::new(PatternKind::Window, n, h)).unwrap()
    }

    fn egad(n: usize, h: usize, globals: &[usize]) -> AttentionPattern {
        build_pattern(&PatternSpec {
            globals: globals.to_vec(),
            ..PatternSpec::new(PatternKind::Egad, n, h)
        })
        .unwrap()
    }

    #[test]
    fn window_rule() {
        let p = window(5, 1);
        assert!(p.is_attended(2, 3));
        assert!(!p.is_attended(0, 4));
    }

    #[test]
    fn longformer_global_row_and_column() {
        let p = build_pattern(&PatternSpec::new(PatternKind::Longformer, 5, 1)).unwrap();
        assert!(p.is_attended(0, 4));
        assert!(p.is_attended(4, 0));
        assert!(!p.is_attended(1, 4));
    }

    #[test]
    fn pair_counts() {
        assert_eq!(AttentionPattern::full(8).pair_count(), 64);
        assert_eq!(window(8, 0).pair_count(), 8);
        assert_eq!(egad(6, 1, &[0]).pair_count(), 24);
    }

    #[test]
    fn dilation_skips() {
        let p = build_pattern(&PatternSpec {
            dilation: 2,
            ..PatternSpec::new(PatternKind::Window, 9, 2)
        })
        .unwrap();
        assert!(p.is_attended(4, 0));
        assert!(p.is_attended(4, 6));
        assert!(!p.is_attended(4, 5));
        assert!(!p.is_attended(0, 6));
        assert_eq!(p.row_keys(4), [0, 2, 4, 6, 8]);
    }

    #[test]
    fn out_of_range_global_rejected() {
        let spec = PatternSpec {
            globals: vec![6],
            ..PatternSpec::new(PatternKind::Egad, 6, 1)
        };
        assert!(matches!(build_pattern(&spec), Err(Error::Validation(_))));
    }

    #[test]
    fn bigbird_reproducible() {
        let spec = PatternSpec {
            random_globals: 3,
            seed: 11,
            ..PatternSpec::new(PatternKind::BigBird, 20, 1)
        };
        let a = build_pattern(&spec).unwrap();
        assert_eq!(a, build_pattern(&spec).unwrap());
        assert_eq!(a.globals().len(), 3);
    }

    #[test]
    fn reachability_examples() {
        let r = window(10, 1).reachability(10);
        assert_eq!(r.hops(0, 3), Some(3));
        assert_eq!(r.hops(4, 4), Some(0));
        let capped = window(10, 1).reachability(2);
        assert_eq!(capped.hops(0, 3), None);
        let g = egad(10, 1, &[5]).reachability(10);
        assert_eq!(g.max_hops(), Some(2));
    }

    #[test]
    fn pgm_output() {
        assert_eq!(AttentionPattern::full(2).to_pgm(), "P2\n2 2\n255\n0 0\n0 0\n");
        assert_eq!(
            window(3, 0).to_pgm(),
            "P2\n3 3\n255\n0 255 255\n255 0 255\n255 255 0\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
        egad(6, 1, &[0]).export_mask(&a).unwrap();
        egad(6, 1, &[0]).export_mask(&b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    proptest! {
        #[test]
        fn row_keys_match_predicate(n in 1usize..24, h in 0usize..4, d in 1usize..4,
                                    globals in proptest::collection::vec(0usize..24, 0..4)) {
            let globals: Vec<usize> = globals.into_iter().filter(|&g| g < n).collect();
            let p = AttentionPattern::windowed(n, h, d, &globals).unwrap();
            let mut pairs = 0;
            for i in 0..n {
                let expected: Vec<usize> = (0..n).filter(|&j| p.is_attended(i, j)).collect();
                prop_assert_eq!(p.row_keys(i), expected.clone());
                prop_assert!(p.is_attended(i, i));
                pairs += expected.len();
            }
            prop_assert_eq!(p.pair_count(), pairs);
            prop_assert!(pairs >= n && pairs <= n * n);
        }

        #[test]
        fn adding_global_is_monotone(n in 1usize..20, h in 0usize..3, g in 0usize..20) {
            let g = g % n;
            let base = AttentionPattern::windowed(n, h, 1, &[]).unwrap();
            let more = AttentionPattern::windowed(n, h, 1, &[g]).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert!(!base.is_attended(i, j) || more.is_attended(i, j));
                    prop_assert!(more.is_attended(g, j) && more.is_attended(j, g));
                }
            }
        }
    }
}
