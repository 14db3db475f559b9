#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{responses} responses for a {key}-item key")]
pub struct LengthMismatch {
    pub responses: usize,
    pub key: usize,
}

/// Fraction of items answered with the keyed option. `None` marks an
/// unanswered item and counts as incorrect. An empty instrument scores 0.
pub fn score_instrument(responses: &[Option<u32>], key: &[u32]) -> Result<f64, LengthMismatch> {
    if responses.len() != key.len() {
        return Err(LengthMismatch {
            responses: responses.len(),
            key: key.len(),
        });
    }
    if key.is_empty() {
        return Ok(0.0);
    }
    let correct = responses
        .iter()
        .zip(key)
        .filter(|(r, k)| **r == Some(**k))
        .count();
    Ok(correct as f64 / key.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_of_fifteen() {
        let key: Vec<u32> = (0..15).map(|i| i % 4).collect();
        let mut responses: Vec<Option<u32>> = key.iter().copied().map(Some).collect();
        responses[0] = Some(3);
        responses[5] = None;
        responses[14] = Some(0);
        assert_eq!(score_instrument(&responses, &key).unwrap(), 0.8);
    }

    #[test]
    fn extremes() {
        let key = vec![1, 2, 3];
        assert_eq!(score_instrument(&[Some(1), Some(2), Some(3)], &key).unwrap(), 1.0);
        assert_eq!(score_instrument(&[None, None, None], &key).unwrap(), 0.0);
        assert!(score_instrument(&[None], &key).is_err());
    }
}
