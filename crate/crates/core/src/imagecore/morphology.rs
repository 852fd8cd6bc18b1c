use std::collections::VecDeque;

use super::Mask;

/// Fills background regions that are not 4-connected to the image border.
pub fn fill_holes(mask: &Mask) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    let data = mask.data();
    let mut outside = vec![false; h * w];
    let mut queue = VecDeque::new();
    let seed = |i: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if !data[i] && !outside[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    };
    for x in 0..w {
        seed(x, &mut outside, &mut queue);
        if h > 0 {
            seed((h - 1) * w + x, &mut outside, &mut queue);
        }
    }
    for y in 0..h {
        seed(y * w, &mut outside, &mut queue);
        if w > 0 {
            seed(y * w + w - 1, &mut outside, &mut queue);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = (i / w, i % w);
        let mut visit = |j: usize| {
            if !data[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        };
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
    }
    let filled = outside.iter().map(|&o| !o).collect();
    Mask::from_vec(h, w, filled).expect("same shape")
}
