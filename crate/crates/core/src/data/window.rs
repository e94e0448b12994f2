use crate::error::{Error, Result};
use crate::interaction::Interaction;

/// A slice of one user's history, at most `window` long.
///
/// Interactions before `first_target` are context already scored by an
/// earlier overlapping window; only positions `first_target..` are targets.
/// `pad` counts the left-padding rows needed to fill the window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedExample {
    pub user: usize,
    pub interactions: Vec<Interaction>,
    pub pad: usize,
    pub first_target: usize,
}

impl WindowedExample {
    pub fn num_targets(&self) -> usize {
        self.interactions.len() - self.first_target
    }

    pub fn targets(&self) -> impl Iterator<Item = usize> {
        self.first_target..self.interactions.len()
    }
}

/// Cuts a history into windows starting at `0, stride, 2·stride, ...` until
/// one reaches the end. Histories that fit emit a single window.
pub fn window(history: &[Interaction], window: usize, stride: usize) -> Result<Vec<WindowedExample>> {
    windows_for(0, history, window, stride)
}

/// [`window`] with the owning user's index recorded.
pub fn windows_for(
    user: usize,
    history: &[Interaction],
    window: usize,
    stride: usize,
) -> Result<Vec<WindowedExample>> {
    if window == 0 || stride == 0 || stride > window {
        return Err(Error::Validation(format!(
            "window {window} and stride {stride} must satisfy 0 < stride <= window"
        )));
    }
    let n = history.len();
    let mut out = Vec::new();
    let mut start = 0;
    let mut covered = 0;
    while start < n {
        let end = (start + window).min(n);
        out.push(WindowedExample {
            user,
            interactions: history[start..end].to_vec(),
            pad: window - (end - start),
            first_target: covered - start,
        });
        covered = end;
        if end == n {
            break;
        }
        start += stride;
    }
    Ok(out)
}
