//! Analyst-defined partition hierarchies over one matrix axis, their
//! collapse state, and projection of matrices through the visible entries.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum Entry {
    Leaf(usize),
    Group(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf(usize),
    Group(GroupNode),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupNode {
    pub name: String,
    pub collapsed: bool,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    fn entry(&self) -> Entry {
        match self {
            TreeNode::Leaf(i) => Entry::Leaf(*i),
            TreeNode::Group(g) => Entry::Group(g.name.clone()),
        }
    }

    fn matches(&self, e: &Entry) -> bool {
        match (self, e) {
            (TreeNode::Leaf(a), Entry::Leaf(b)) => a == b,
            (TreeNode::Group(g), Entry::Group(n)) => &g.name == n,
            _ => false,
        }
    }

    fn leaves_into(&self, out: &mut Vec<usize>) {
        match self {
            TreeNode::Leaf(i) => out.push(*i),
            TreeNode::Group(g) => g.children.iter().for_each(|c| c.leaves_into(out)),
        }
    }

    fn contains(&self, e: &Entry) -> bool {
        self.matches(e)
            || matches!(self, TreeNode::Group(g) if g.children.iter().any(|c| c.contains(e)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum HierarchyEdit {
    /// New group under `parent` (root when `None`) holding `members`.
    CreateGroup {
        name: String,
        parent: Option<String>,
        members: Vec<Entry>,
    },
    MoveEntry {
        entry: Entry,
        into: Option<String>,
        position: Option<usize>,
    },
    Rename {
        from: String,
        to: String,
    },
    /// Without `cascade` the children move up to the grandparent; with it,
    /// nested groups dissolve as well and only the leaves move up.
    DeleteGroup {
        name: String,
        cascade: bool,
    },
    ReorderSiblings {
        parent: Option<String>,
        order: Vec<Entry>,
    },
    SetCollapse {
        group: String,
        collapsed: bool,
    },
}

/// One visible row or column: a single leaf or a collapsed group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibleEntry {
    /// Group name when collapsed, `None` for a leaf.
    pub group: Option<String>,
    pub leaves: Vec<usize>,
}

/// Nested grouping of the indices `0..len` of one axis. Every leaf appears
/// exactly once and group names are unique.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionTree {
    len: usize,
    version: u64,
    root: Vec<TreeNode>,
}

impl PartitionTree {
    /// Flat tree in index order.
    pub fn flat(len: usize) -> Self {
        PartitionTree {
            len,
            version: 0,
            root: (0..len).map(TreeNode::Leaf).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn root(&self) -> &[TreeNode] {
        &self.root
    }

    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len);
        self.root.iter().for_each(|c| c.leaves_into(&mut out));
        out
    }

    pub fn group_names(&self) -> Vec<String> {
        fn walk(nodes: &[TreeNode], out: &mut Vec<String>) {
            for n in nodes {
                if let TreeNode::Group(g) = n {
                    out.push(g.name.clone());
                    walk(&g.children, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn group(&self, name: &str) -> Option<&GroupNode> {
        fn find<'a>(nodes: &'a [TreeNode], name: &str) -> Option<&'a GroupNode> {
            nodes.iter().find_map(|n| match n {
                TreeNode::Group(g) if g.name == name => Some(g),
                TreeNode::Group(g) => find(&g.children, name),
                TreeNode::Leaf(_) => None,
            })
        }
        find(&self.root, name)
    }

    /// Checks leaf coverage and name uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut leaves = self.leaves();
        leaves.sort_unstable();
        if leaves != (0..self.len).collect::<Vec<_>>() {
            return Err(Error::Structure(format!(
                "leaves do not cover 0..{} exactly once",
                self.len
            )));
        }
        let names = self.group_names();
        let unique: BTreeSet<_> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::Name("duplicate group name".into()));
        }
        Ok(())
    }

    fn children_mut(&mut self, parent: Option<&str>) -> Result<&mut Vec<TreeNode>> {
        fn find<'a>(nodes: &'a mut [TreeNode], name: &str) -> Option<&'a mut GroupNode> {
            for n in nodes.iter_mut() {
                if let TreeNode::Group(g) = n {
                    if g.name == name {
                        return Some(g);
                    }
                    if let Some(found) = find(&mut g.children, name) {
                        return Some(found);
                    }
                }
            }
            None
        }
        match parent {
            None => Ok(&mut self.root),
            Some(name) => find(&mut self.root, name)
                .map(|g| &mut g.children)
                .ok_or_else(|| lookup(name)),
        }
    }

    fn children(&self, parent: Option<&str>) -> Result<&[TreeNode]> {
        match parent {
            None => Ok(&self.root),
            Some(name) => self
                .group(name)
                .map(|g| g.children.as_slice())
                .ok_or_else(|| lookup(name)),
        }
    }

    fn check_entry(&self, e: &Entry) -> Result<()> {
        match e {
            Entry::Leaf(i) if *i < self.len => Ok(()),
            Entry::Leaf(i) => Err(Error::index(format!(
                "leaf {i} outside axis of length {}",
                self.len
            ))),
            Entry::Group(n) => self.group(n).map(|_| ()).ok_or_else(|| lookup(n)),
        }
    }

    /// Removes `e` from wherever it sits; returns it with its former parent
    /// and position.
    fn detach(&mut self, e: &Entry) -> Option<(TreeNode, Option<String>, usize)> {
        fn walk(
            nodes: &mut Vec<TreeNode>,
            parent: Option<&str>,
            e: &Entry,
        ) -> Option<(TreeNode, Option<String>, usize)> {
            if let Some(k) = nodes.iter().position(|n| n.matches(e)) {
                return Some((nodes.remove(k), parent.map(str::to_owned), k));
            }
            for n in nodes.iter_mut() {
                if let TreeNode::Group(g) = n {
                    if let Some(hit) = walk(&mut g.children, Some(&g.name.clone()), e) {
                        return Some(hit);
                    }
                }
            }
            None
        }
        walk(&mut self.root, None, e)
    }

    /// Whether `target` (a group name) lies inside the subtree of `e`.
    fn within(&self, target: &str, e: &Entry) -> bool {
        fn find<'a>(nodes: &'a [TreeNode], e: &Entry) -> Option<&'a TreeNode> {
            nodes.iter().find_map(|n| {
                if n.matches(e) {
                    Some(n)
                } else if let TreeNode::Group(g) = n {
                    find(&g.children, e)
                } else {
                    None
                }
            })
        }
        find(&self.root, e).is_some_and(|n| n.contains(&Entry::Group(target.to_owned())))
    }

    /// Applies one edit, producing the next version.
    pub fn mutate(&self, edit: &HierarchyEdit) -> Result<PartitionTree> {
        let mut t = self.clone();
        match edit {
            HierarchyEdit::CreateGroup {
                name,
                parent,
                members,
            } => {
                if name.is_empty() {
                    return Err(Error::Name("group name must not be empty".into()));
                }
                if t.group(name).is_some() {
                    return Err(Error::Name(format!("group {name:?} already exists")));
                }
                t.children(parent.as_deref())?;
                let mut seen = Vec::new();
                for m in members {
                    t.check_entry(m)?;
                    if seen.contains(m) {
                        return Err(Error::Structure(format!("{m:?} listed twice")));
                    }
                    if let Some(p) = parent {
                        if t.within(p, m) {
                            return Err(Error::Structure(format!(
                                "group {p:?} lies inside member {m:?}"
                            )));
                        }
                    }
                    seen.push(m.clone());
                }
                let mut children = Vec::with_capacity(members.len());
                let mut slot = None;
                for m in members {
                    let (node, from, k) = t.detach(m).expect("checked above");
                    if slot.is_none() && from.as_deref() == parent.as_deref() {
                        slot = Some(k);
                    }
                    children.push(node);
                }
                let siblings = t.children_mut(parent.as_deref())?;
                let at = slot.unwrap_or(siblings.len()).min(siblings.len());
                siblings.insert(
                    at,
                    TreeNode::Group(GroupNode {
                        name: name.clone(),
                        collapsed: false,
                        children,
                    }),
                );
            }
            HierarchyEdit::MoveEntry {
                entry,
                into,
                position,
            } => {
                t.check_entry(entry)?;
                if let Some(target) = into {
                    t.children(Some(target))?;
                    if t.within(target, entry) {
                        return Err(Error::Structure(format!(
                            "cannot move {entry:?} into its own subtree {target:?}"
                        )));
                    }
                }
                let (node, _, _) = t.detach(entry).expect("checked above");
                let siblings = t.children_mut(into.as_deref())?;
                let at = position.unwrap_or(siblings.len());
                if at > siblings.len() {
                    return Err(Error::index(format!(
                        "position {at} past {} siblings",
                        siblings.len()
                    )));
                }
                siblings.insert(at, node);
            }
            HierarchyEdit::Rename { from, to } => {
                if to.is_empty() {
                    return Err(Error::Name("group name must not be empty".into()));
                }
                if from != to && t.group(to).is_some() {
                    return Err(Error::Name(format!("group {to:?} already exists")));
                }
                t.check_entry(&Entry::Group(from.clone()))?;
                let (node, parent, k) = t
                    .detach(&Entry::Group(from.clone()))
                    .expect("checked above");
                let TreeNode::Group(mut g) = node else {
                    unreachable!()
                };
                g.name = to.clone();
                t.children_mut(parent.as_deref())?
                    .insert(k, TreeNode::Group(g));
            }
            HierarchyEdit::DeleteGroup { name, cascade } => {
                t.check_entry(&Entry::Group(name.clone()))?;
                let (node, parent, k) = t
                    .detach(&Entry::Group(name.clone()))
                    .expect("checked above");
                let TreeNode::Group(g) = node else {
                    unreachable!()
                };
                let moved: Vec<TreeNode> = if *cascade {
                    let mut leaves = Vec::new();
                    g.children.iter().for_each(|c| c.leaves_into(&mut leaves));
                    leaves.into_iter().map(TreeNode::Leaf).collect()
                } else {
                    g.children
                };
                t.children_mut(parent.as_deref())?.splice(k..k, moved);
            }
            HierarchyEdit::ReorderSiblings { parent, order } => {
                let siblings = t.children_mut(parent.as_deref())?;
                if order.len() != siblings.len() {
                    return Err(Error::Structure(format!(
                        "order lists {} entries for {} siblings",
                        order.len(),
                        siblings.len()
                    )));
                }
                let mut pool: Vec<Option<TreeNode>> = siblings.drain(..).map(Some).collect();
                let mut next = Vec::with_capacity(pool.len());
                for e in order {
                    let k = pool
                        .iter()
                        .position(|n| n.as_ref().is_some_and(|n| n.matches(e)))
                        .ok_or_else(|| {
                            Error::Structure(format!("{e:?} is not a remaining sibling"))
                        })?;
                    next.push(pool[k].take().expect("present"));
                }
                *siblings = next;
            }
            HierarchyEdit::SetCollapse { group, collapsed } => {
                t.check_entry(&Entry::Group(group.clone()))?;
                let (node, parent, k) = t
                    .detach(&Entry::Group(group.clone()))
                    .expect("checked above");
                let TreeNode::Group(mut g) = node else {
                    unreachable!()
                };
                g.collapsed = *collapsed;
                t.children_mut(parent.as_deref())?
                    .insert(k, TreeNode::Group(g));
            }
        }
        t.version += 1;
        debug_assert!(t.validate().is_ok());
        Ok(t)
    }

    pub fn set_collapse(&self, group: &str, collapsed: bool) -> Result<PartitionTree> {
        self.mutate(&HierarchyEdit::SetCollapse {
            group: group.to_owned(),
            collapsed,
        })
    }

    /// Sorts every sibling list by the smallest rank among each entry's
    /// leaves (stable), leaving the grouping itself unchanged.
    pub fn sorted_by_ranks(&self, ranks: &[usize]) -> Result<PartitionTree> {
        if ranks.len() != self.len {
            return Err(Error::dimension(format!(
                "{} ranks for {} leaves",
                ranks.len(),
                self.len
            )));
        }
        fn sort(nodes: &mut [TreeNode], ranks: &[usize]) -> usize {
            let mut keyed: Vec<(usize, usize)> = Vec::with_capacity(nodes.len());
            for (k, n) in nodes.iter_mut().enumerate() {
                let key = match n {
                    TreeNode::Leaf(i) => ranks[*i],
                    TreeNode::Group(g) => sort(&mut g.children, ranks),
                };
                keyed.push((key, k));
            }
            keyed.sort_by_key(|&(key, _)| key);
            let old: Vec<TreeNode> = nodes.to_vec();
            for (slot, &(_, k)) in nodes.iter_mut().zip(&keyed) {
                *slot = old[k].clone();
            }
            keyed.first().map_or(usize::MAX, |&(key, _)| key)
        }
        let mut t = self.clone();
        sort(&mut t.root, ranks);
        t.version += 1;
        Ok(t)
    }

    /// Visible entries in display order: expanded groups pass their
    /// children through, collapsed ones become one entry.
    pub fn visible(&self) -> Vec<VisibleEntry> {
        fn walk(nodes: &[TreeNode], out: &mut Vec<VisibleEntry>) {
            for n in nodes {
                match n {
                    TreeNode::Leaf(i) => out.push(VisibleEntry {
                        group: None,
                        leaves: vec![*i],
                    }),
                    TreeNode::Group(g) if g.collapsed => {
                        let mut leaves = Vec::new();
                        n.leaves_into(&mut leaves);
                        out.push(VisibleEntry {
                            group: Some(g.name.clone()),
                            leaves,
                        });
                    }
                    TreeNode::Group(g) => walk(&g.children, out),
                }
            }
        }
        let mut out = Vec::with_capacity(self.len);
        walk(&self.root, &mut out);
        out
    }

    /// Entry list for an edit referencing the current children of `parent`.
    pub fn sibling_entries(&self, parent: Option<&str>) -> Result<Vec<Entry>> {
        Ok(self.children(parent)?.iter().map(TreeNode::entry).collect())
    }
}

fn lookup(name: &str) -> Error {
    Error::Lookup {
        kind: "group",
        name: name.to_owned(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    Max,
    Mean,
}

impl Aggregator {
    pub fn reduce(self, values: impl Iterator<Item = f64>) -> f64 {
        match self {
            Aggregator::Max => values.fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Mean => {
                let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                sum / n as f64
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub values: Array2<f64>,
    pub rows: Vec<VisibleEntry>,
    pub cols: Vec<VisibleEntry>,
}

/// Aggregates `matrix` over the visible entries of both trees.
pub fn project(
    matrix: ArrayView2<f64>,
    rows: &PartitionTree,
    cols: &PartitionTree,
    aggregator: Aggregator,
) -> Result<Projection> {
    if matrix.dim() != (rows.len(), cols.len()) {
        return Err(Error::dimension(format!(
            "matrix {:?} vs trees {}x{}",
            matrix.dim(),
            rows.len(),
            cols.len()
        )));
    }
    let r = rows.visible();
    let c = cols.visible();
    let values = project_window(matrix, &r, &c, aggregator);
    Ok(Projection {
        values,
        rows: r,
        cols: c,
    })
}

/// Aggregates `matrix` over explicit visible entry lists; used for windows
/// of a larger projection.
pub fn project_window(
    matrix: ArrayView2<f64>,
    rows: &[VisibleEntry],
    cols: &[VisibleEntry],
    aggregator: Aggregator,
) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), cols.len()), |(a, b)| {
        let (ra, cb) = (&rows[a].leaves, &cols[b].leaves);
        if ra.len() == 1 && cb.len() == 1 {
            matrix[[ra[0], cb[0]]]
        } else {
            aggregator.reduce(
                ra.iter()
                    .flat_map(|&i| cb.iter().map(move |&j| matrix[[i, j]])),
            )
        }
    })
}
