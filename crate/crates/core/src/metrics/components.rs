use super::InstanceLabelMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// Labels pixels with `prob > threshold` into connected instances. Labels
/// follow the order in which a row-major scan first meets each component.
pub fn connected_components(
    prob: &[f32],
    height: usize,
    width: usize,
    threshold: f32,
    connectivity: Connectivity,
) -> Result<InstanceLabelMap> {
    if prob.len() != height * width {
        return Err(Error::shape(format!(
            "{} probabilities for a {height}×{width} map",
            prob.len()
        )));
    }
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
    };
    let mut labels = vec![0u32; prob.len()];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..prob.len() {
        if labels[start] != 0 || prob[start] <= threshold {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (y, x) = ((idx / width) as isize, (idx % width) as isize);
            for &(dy, dx) in offsets {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                    continue;
                }
                let n = ny as usize * width + nx as usize;
                if labels[n] == 0 && prob[n] > threshold {
                    labels[n] = next;
                    stack.push(n);
                }
            }
        }
    }
    InstanceLabelMap::new(height, width, labels)
}
