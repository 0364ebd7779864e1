//! Line diffs for expectation feedback.
//!
//! [`myers_diff`] computes a shortest insert/delete edit script with the
//! linear-space variant of Myers' O(ND) algorithm: common prefixes and
//! suffixes are trimmed, then the problem is split around the middle snake of
//! an optimal path and both halves are solved recursively. Pieces that get
//! small enough are searched from one corner with every round kept. Within every run of
//! changes, deletions are ordered before insertions so rendered hunks read as
//! "expected lines, then received lines".

use std::fmt;

use thiserror::Error;

pub const DEFAULT_CONTEXT: usize = 1;
pub const DEFAULT_MAX_LINES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EditKind {
    Keep,
    Delete,
    Insert,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditOp {
    pub kind: EditKind,
    pub line: String,
}

/// An ordered list of operations turning a source line sequence into a target.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
}

impl EditScript {
    /// Number of Delete plus Insert operations.
    pub fn edit_count(&self) -> usize {
        self.ops.iter().filter(|op| op.kind != EditKind::Keep).count()
    }

    pub fn is_identity(&self) -> bool {
        self.edit_count() == 0
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("edit script does not match source at line {line}")]
    ScriptMismatch { line: usize },
}

/// One position-level edit. `old` and `new` are the cursor positions in the
/// source and target when the edit applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edit {
    pub kind: EditKind,
    pub old: usize,
    pub new: usize,
}

/// Reusable scratch space for repeated diffs.
#[derive(Debug, Default)]
pub struct Myers {
    forward: Vec<usize>,
    backward: Vec<usize>,
    // Furthest x per diagonal for every round of a small search; round d
    // starts at index d * d.
    trace: Vec<usize>,
}

// Subproblems this small are searched from one corner with the full trace
// kept, which beats splitting them further.
const TRACE_LIMIT: usize = 64;

struct Snake {
    x_start: usize,
    y_start: usize,
    x_end: usize,
    y_end: usize,
}

impl Myers {
    pub fn new() -> Self {
        Self::default()
    }

    /// Computes a minimal edit script between `a` and `b`, appending the edits
    /// to `out` (which is cleared first).
    pub fn diff_into<T: PartialEq>(&mut self, a: &[T], b: &[T], out: &mut Vec<Edit>) {
        out.clear();
        let max_d = max_d(a.len(), b.len());
        let size = 2 * max_d + 2;
        if self.forward.len() < size {
            self.forward.resize(size, 0);
            self.backward.resize(size, 0);
        }
        self.conquer(a, b, 0, 0, out);
        deletes_first(out);
    }

    pub fn diff<T: PartialEq>(&mut self, a: &[T], b: &[T]) -> Vec<Edit> {
        let mut out = Vec::with_capacity(a.len().max(b.len()));
        self.diff_into(a, b, &mut out);
        out
    }

    fn conquer<T: PartialEq>(
        &mut self,
        mut a: &[T],
        mut b: &[T],
        mut old: usize,
        mut new: usize,
        out: &mut Vec<Edit>,
    ) {
        let prefix = common_prefix(a, b);
        for _ in 0..prefix {
            out.push(Edit { kind: EditKind::Keep, old, new });
            old += 1;
            new += 1;
        }
        a = &a[prefix..];
        b = &b[prefix..];

        let suffix = common_suffix(a, b);
        a = &a[..a.len() - suffix];
        b = &b[..b.len() - suffix];

        if a.is_empty() {
            for j in 0..b.len() {
                out.push(Edit { kind: EditKind::Insert, old, new: new + j });
            }
        } else if b.is_empty() {
            for i in 0..a.len() {
                out.push(Edit { kind: EditKind::Delete, old: old + i, new });
            }
        } else if a.len() == 1 || b.len() == 1 {
            single(a, b, old, new, out);
        } else if a.len() + b.len() <= TRACE_LIMIT {
            self.traced(a, b, old, new, out);
        } else {
            let snake = self.middle_snake(a, b);
            self.conquer(&a[..snake.x_start], &b[..snake.y_start], old, new, out);
            let mut x = old + snake.x_start;
            let mut y = new + snake.y_start;
            for _ in snake.x_start..snake.x_end {
                out.push(Edit { kind: EditKind::Keep, old: x, new: y });
                x += 1;
                y += 1;
            }
            self.conquer(&a[snake.x_end..], &b[snake.y_end..], x, y, out);
        }

        old += a.len();
        new += b.len();
        for _ in 0..suffix {
            out.push(Edit { kind: EditKind::Keep, old, new });
            old += 1;
            new += 1;
        }
    }

    // Greedy forward search that records every round, then walks back from
    // the far corner.
    fn traced<T: PartialEq>(&mut self, a: &[T], b: &[T], old: usize, new: usize, out: &mut Vec<Edit>) {
        let n = a.len();
        let m = b.len();
        let total = n + m;
        let needed = (total + 1) * (total + 1);
        if self.trace.len() < needed {
            self.trace.resize(needed, 0);
        }
        let v = &mut self.trace[..needed];

        // Round d covers diagonals -d..=d; diagonal k sits at j = k + d in
        // its row, so the neighbours k - 1 and k + 1 of the previous round
        // sit at j - 2 and j there.
        let mut end = 0;
        'search: for d in 0..=total {
            let (done, rest) = v.split_at_mut(d * d);
            let cur = &mut rest[..2 * d + 1];
            let prev = &done[done.len() - (2 * d).saturating_sub(1)..];
            for j in (0..=2 * d).step_by(2) {
                let mut x = if d == 0 {
                    0
                } else if j == 0 || (j != 2 * d && prev[j - 2] < prev[j]) {
                    prev[j]
                } else {
                    prev[j - 2] + 1
                };
                let mut y = x + d - j;
                while x < n && y < m && a[x] == b[y] {
                    x += 1;
                    y += 1;
                }
                cur[j] = x;
                if x >= n && y >= m {
                    end = d;
                    break 'search;
                }
            }
        }

        let first = out.len();
        // j is the position of the current diagonal within its round.
        let mut j = end + n - m;
        for d in (0..=end).rev() {
            let row = &v[d * d..d * d + 2 * d + 1];
            let x = row[j];
            let (mid_x, mid_y, inserted) = if d == 0 {
                (0, 0, false)
            } else {
                let prev = &v[(d - 1) * (d - 1)..d * d];
                if j == 0 || (j != 2 * d && prev[j - 2] < prev[j]) {
                    (prev[j], prev[j] + d - j, true)
                } else {
                    (prev[j - 2] + 1, prev[j - 2] + 1 + d - j, false)
                }
            };
            for s in (0..x - mid_x).rev() {
                out.push(Edit { kind: EditKind::Keep, old: old + mid_x + s, new: new + mid_y + s });
            }
            if d > 0 {
                let edit = if inserted {
                    Edit { kind: EditKind::Insert, old: old + mid_x, new: new + mid_y - 1 }
                } else {
                    Edit { kind: EditKind::Delete, old: old + mid_x - 1, new: new + mid_y }
                };
                out.push(edit);
                // Previous round: k' = k + 1 sits at j, k' = k - 1 at j - 2.
                if !inserted {
                    j -= 2;
                }
            }
        }
        out[first..].reverse();
    }

    // Runs the greedy search from both corners until the furthest-reaching
    // paths overlap; the snake at the overlap lies on an optimal path.
    fn middle_snake<T: PartialEq>(&mut self, a: &[T], b: &[T]) -> Snake {
        let n = a.len();
        let m = b.len();
        let delta = n as isize - m as isize;
        let odd = delta & 1 == 1;
        let d_max = max_d(n, m) as isize;
        // Diagonal k lives at index k + d_max.
        let width = 2 * d_max as usize + 2;
        let vf = &mut self.forward[..width];
        let vb = &mut self.backward[..width];
        let at = |k: isize| (k + d_max) as usize;

        vf[at(1)] = 0;
        vb[at(1)] = 0;

        for d in 0..d_max {
            let mut k = d;
            while k >= -d {
                let i = at(k);
                let mut x = if k == -d || (k != d && vf[i - 1] < vf[i + 1]) {
                    vf[i + 1]
                } else {
                    vf[i - 1] + 1
                };
                let mut y = (x as isize - k) as usize;
                let (x0, y0) = (x, y);
                while x < n && y < m && a[x] == b[y] {
                    x += 1;
                    y += 1;
                }
                vf[i] = x;
                if odd && (k - delta).abs() < d && x + vb[at(delta - k)] >= n {
                    return Snake {
                        x_start: x0,
                        y_start: y0,
                        x_end: x,
                        y_end: y,
                    };
                }
                k -= 2;
            }

            let mut k = d;
            while k >= -d {
                let i = at(k);
                let mut x = if k == -d || (k != d && vb[i - 1] < vb[i + 1]) {
                    vb[i + 1]
                } else {
                    vb[i - 1] + 1
                };
                let mut y = (x as isize - k) as usize;
                let (x0, y0) = (x, y);
                while x < n && y < m && a[n - x - 1] == b[m - y - 1] {
                    x += 1;
                    y += 1;
                }
                vb[i] = x;
                if !odd && (k - delta).abs() <= d && x + vf[at(delta - k)] >= n {
                    return Snake {
                        x_start: n - x,
                        y_start: m - y,
                        x_end: n - x0,
                        y_end: m - y0,
                    };
                }
                k -= 2;
            }
        }

        unreachable!("paths from both corners always meet within d_max steps")
    }
}

// One side is a single element: keep its first match in the other side, if
// any, and delete or insert everything else.
fn single<T: PartialEq>(a: &[T], b: &[T], old: usize, new: usize, out: &mut Vec<Edit>) {
    let matched = if a.len() == 1 {
        b.iter().position(|v| *v == a[0]).map(|j| (0, j))
    } else {
        a.iter().position(|v| *v == b[0]).map(|i| (i, 0))
    };
    let Some((i, j)) = matched else {
        for x in 0..a.len() {
            out.push(Edit { kind: EditKind::Delete, old: old + x, new });
        }
        for y in 0..b.len() {
            out.push(Edit { kind: EditKind::Insert, old: old + a.len(), new: new + y });
        }
        return;
    };
    for x in 0..i {
        out.push(Edit { kind: EditKind::Delete, old: old + x, new });
    }
    for y in 0..j {
        out.push(Edit { kind: EditKind::Insert, old: old + i, new: new + y });
    }
    out.push(Edit { kind: EditKind::Keep, old: old + i, new: new + j });
    for x in i + 1..a.len() {
        out.push(Edit { kind: EditKind::Delete, old: old + x, new: new + j + 1 });
    }
    for y in j + 1..b.len() {
        out.push(Edit { kind: EditKind::Insert, old: old + i + 1, new: new + y });
    }
}

fn max_d(n: usize, m: usize) -> usize {
    (n + m).div_ceil(2) + 1
}

fn common_prefix<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn common_suffix<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    a.iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count()
}

// Within a run of changes the deleted lines are contiguous in the source and
// the inserted lines contiguous in the target, so reordering keeps the script
// valid and its length unchanged.
fn deletes_first(edits: &mut [Edit]) {
    let mut i = 0;
    while i < edits.len() {
        if edits[i].kind == EditKind::Keep {
            i += 1;
            continue;
        }
        let start = i;
        while i < edits.len() && edits[i].kind != EditKind::Keep {
            i += 1;
        }
        let run = &mut edits[start..i];
        let ordered = run
            .iter()
            .skip_while(|e| e.kind == EditKind::Delete)
            .all(|e| e.kind == EditKind::Insert);
        if ordered {
            continue;
        }
        let old0 = run.iter().map(|e| e.old).min().unwrap_or(0);
        let new0 = run.iter().map(|e| e.new).min().unwrap_or(0);
        let deletes = run.iter().filter(|e| e.kind == EditKind::Delete).count();
        for (j, edit) in run.iter_mut().enumerate() {
            *edit = if j < deletes {
                Edit { kind: EditKind::Delete, old: old0 + j, new: new0 }
            } else {
                Edit {
                    kind: EditKind::Insert,
                    old: old0 + deletes,
                    new: new0 + (j - deletes),
                }
            };
        }
    }
}

/// Computes a minimal line edit script from `a` to `b`.
pub fn myers_diff<S: AsRef<str>>(a: &[S], b: &[S]) -> EditScript {
    let left: Vec<&str> = a.iter().map(AsRef::as_ref).collect();
    let right: Vec<&str> = b.iter().map(AsRef::as_ref).collect();
    let edits = Myers::new().diff(&left, &right);
    let ops = edits
        .into_iter()
        .map(|edit| {
            let line = match edit.kind {
                EditKind::Keep | EditKind::Delete => left[edit.old],
                EditKind::Insert => right[edit.new],
            };
            EditOp {
                kind: edit.kind,
                line: line.to_owned(),
            }
        })
        .collect();
    EditScript { ops }
}

/// Replays `script` over `a`. Fails when a Keep or Delete line disagrees with
/// the source, or when the script does not consume the whole source.
pub fn apply_script<S: AsRef<str>>(a: &[S], script: &EditScript) -> Result<Vec<String>, DiffError> {
    let mut out = Vec::with_capacity(a.len());
    let mut pos = 0;
    for op in &script.ops {
        match op.kind {
            EditKind::Keep | EditKind::Delete => {
                match a.get(pos) {
                    Some(line) if line.as_ref() == op.line => {}
                    _ => return Err(DiffError::ScriptMismatch { line: pos + 1 }),
                }
                if op.kind == EditKind::Keep {
                    out.push(op.line.clone());
                }
                pos += 1;
            }
            EditKind::Insert => out.push(op.line.clone()),
        }
    }
    if pos != a.len() {
        return Err(DiffError::ScriptMismatch { line: pos + 1 });
    }
    Ok(out)
}

/// A unified-format hunk. Start positions follow the `diff -u` header
/// convention: 1-based, or the preceding line number when the length is zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffHunk {
    pub src_start: usize,
    pub src_len: usize,
    pub dst_start: usize,
    pub dst_len: usize,
    pub lines: Vec<(char, String)>,
}

impl DiffHunk {
    pub fn header(&self) -> String {
        format!(
            "@@ -{} +{} @@",
            range(self.src_start, self.src_len),
            range(self.dst_start, self.dst_len)
        )
    }
}

fn range(start: usize, len: usize) -> String {
    if len == 1 {
        start.to_string()
    } else {
        format!("{start},{len}")
    }
}

impl fmt::Display for DiffHunk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.header())?;
        for (marker, text) in &self.lines {
            write!(f, "\n{marker}{text}")?;
        }
        Ok(())
    }
}

/// Groups the script's changes into hunks with `context` unchanged lines
/// around each; changes separated by at most `2 * context` kept lines share
/// a hunk.
pub fn hunks(script: &EditScript, context: usize) -> Vec<DiffHunk> {
    let ops = &script.ops;
    // Cursor positions before each op.
    let mut positions = Vec::with_capacity(ops.len() + 1);
    let (mut old, mut new) = (0usize, 0usize);
    for op in ops {
        positions.push((old, new));
        match op.kind {
            EditKind::Keep => {
                old += 1;
                new += 1;
            }
            EditKind::Delete => old += 1,
            EditKind::Insert => new += 1,
        }
    }
    positions.push((old, new));

    let changes: Vec<usize> = ops
        .iter()
        .enumerate()
        .filter(|(_, op)| op.kind != EditKind::Keep)
        .map(|(i, _)| i)
        .collect();

    let mut out = Vec::new();
    let mut c = 0;
    while c < changes.len() {
        let first = changes[c];
        let mut last = first;
        while c + 1 < changes.len() && changes[c + 1] - last - 1 <= 2 * context {
            c += 1;
            last = changes[c];
        }
        c += 1;

        let begin = first.saturating_sub(context);
        let end = (last + 1 + context).min(ops.len());
        let (src_pos, dst_pos) = positions[begin];
        let (src_end, dst_end) = positions[end];
        let src_len = src_end - src_pos;
        let dst_len = dst_end - dst_pos;
        let lines = ops[begin..end]
            .iter()
            .map(|op| {
                let marker = match op.kind {
                    EditKind::Keep => ' ',
                    EditKind::Delete => '-',
                    EditKind::Insert => '+',
                };
                (marker, op.line.clone())
            })
            .collect();
        out.push(DiffHunk {
            src_start: if src_len == 0 { src_pos } else { src_pos + 1 },
            src_len,
            dst_start: if dst_len == 0 { dst_pos } else { dst_pos + 1 },
            dst_len,
            lines,
        });
    }
    out
}

/// Renders `script` as unified-diff hunks. At most `max_lines` lines are
/// emitted; anything beyond is replaced by a single elision line.
pub fn render_unified(script: &EditScript, context: usize, max_lines: usize) -> String {
    let max_lines = max_lines.max(1);
    let mut lines = Vec::new();
    for hunk in hunks(script, context) {
        lines.push(hunk.header());
        lines.extend(
            hunk.lines
                .into_iter()
                .map(|(marker, text)| format!("{marker}{text}")),
        );
    }
    if lines.len() > max_lines {
        let omitted = lines.len() - max_lines;
        lines.truncate(max_lines);
        lines.push(elision_marker(omitted));
    }
    lines.join("\n")
}

pub fn elision_marker(omitted: usize) -> String {
    format!("... ({omitted} more lines)")
}
