//! Positional edits over char sequences and their pairwise transformation.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Edit {
    Insert { pos: usize, text: Vec<char>, author: String },
    Delete { pos: usize, len: usize },
}

impl Edit {
    pub fn is_noop(&self) -> bool {
        match self {
            Edit::Insert { text, .. } => text.is_empty(),
            Edit::Delete { len, .. } => *len == 0,
        }
    }

    /// Whether the edit fits a document of `doc_len` chars.
    pub fn fits(&self, doc_len: usize) -> bool {
        match self {
            Edit::Insert { pos, .. } => *pos <= doc_len,
            Edit::Delete { pos, len } => pos + len <= doc_len,
        }
    }

    pub fn apply(&self, doc: &mut Vec<char>) {
        match self {
            Edit::Insert { pos, text, .. } => {
                doc.splice(*pos..*pos, text.iter().copied());
            }
            Edit::Delete { pos, len } => {
                doc.drain(*pos..*pos + *len);
            }
        }
    }

    pub fn len_delta(&self) -> isize {
        match self {
            Edit::Insert { text, .. } => text.len() as isize,
            Edit::Delete { len, .. } => -(*len as isize),
        }
    }
}

fn del(pos: usize, len: usize) -> Vec<Edit> {
    if len == 0 {
        Vec::new()
    } else {
        vec![Edit::Delete { pos, len }]
    }
}

/// `y` rebased over an already-applied delete `(p1, l1)`.
fn delete_over_delete(p1: usize, l1: usize, p2: usize, l2: usize) -> Vec<Edit> {
    let (e1, e2) = (p1 + l1, p2 + l2);
    if e2 <= p1 {
        del(p2, l2)
    } else if p2 >= e1 {
        del(p2 - l1, l2)
    } else {
        let overlap = e1.min(e2) - p1.max(p2);
        del(p1.min(p2), l2 - overlap)
    }
}

/// Given `a` committed before the concurrent `b` (both against the same
/// document), returns `(a', b')` with `b' ∘ a == a' ∘ b`.
///
/// Equal-position inserts order by author, `a` first on a tie. An insert
/// strictly inside a concurrent delete survives at the deletion point, which
/// splits the delete in two.
pub fn transform_pair(a: &Edit, b: &Edit) -> (Vec<Edit>, Vec<Edit>) {
    use Edit::{Delete, Insert};
    match (a, b) {
        (
            Insert { pos: pa, text: ta, author: aa },
            Insert { pos: pb, text: tb, author: ab },
        ) => {
            if pa < pb || (pa == pb && aa <= ab) {
                (vec![a.clone()], vec![Insert { pos: pb + ta.len(), text: tb.clone(), author: ab.clone() }])
            } else {
                (vec![Insert { pos: pa + tb.len(), text: ta.clone(), author: aa.clone() }], vec![b.clone()])
            }
        }
        (Insert { pos: pa, text, author }, Delete { pos: pb, len: lb }) => {
            let n = text.len();
            if *pa <= *pb {
                (vec![a.clone()], del(pb + n, *lb))
            } else if *pa >= pb + lb {
                (vec![Insert { pos: pa - lb, text: text.clone(), author: author.clone() }], vec![b.clone()])
            } else {
                let left = pa - pb;
                let mut pieces = del(*pb, left);
                pieces.extend(del(pb + n, lb - left));
                (vec![Insert { pos: *pb, text: text.clone(), author: author.clone() }], pieces)
            }
        }
        (Delete { .. }, Insert { .. }) => {
            let (b2, a2) = transform_pair(b, a);
            (a2, b2)
        }
        (Delete { pos: pa, len: la }, Delete { pos: pb, len: lb }) => {
            (delete_over_delete(*pb, *lb, *pa, *la), delete_over_delete(*pa, *la, *pb, *lb))
        }
    }
}

/// Transforms two concurrent edit sequences: `a` was committed first. Both
/// start from the same document; the results satisfy `b' ∘ a == a' ∘ b`.
pub fn transform_seq(a: Vec<Edit>, b: Vec<Edit>) -> (Vec<Edit>, Vec<Edit>) {
    let mut b_cur: Vec<Edit> = b.into_iter().filter(|e| !e.is_noop()).collect();
    let mut a_out = Vec::with_capacity(a.len());
    for x in a.into_iter().filter(|e| !e.is_noop()) {
        if b_cur.is_empty() {
            a_out.push(x);
            continue;
        }
        let (xs, bs) = transform_one(x, b_cur);
        a_out.extend(xs);
        b_cur = bs;
    }
    (a_out, b_cur)
}

/// One edit of `a` against the whole of `b`.
fn transform_one(x: Edit, b: Vec<Edit>) -> (Vec<Edit>, Vec<Edit>) {
    let mut xs = vec![x];
    let mut b_out = Vec::with_capacity(b.len() + 1);
    for y in b {
        if xs.is_empty() {
            b_out.push(y);
            continue;
        }
        let (xs2, ys) = if xs.len() == 1 {
            transform_pair(&xs[0], &y)
        } else {
            transform_seq(xs, vec![y])
        };
        xs = xs2;
        b_out.extend(ys);
    }
    (xs, b_out)
}
