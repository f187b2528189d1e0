use crate::data::RewardMap;
use crate::error::{Error, Result};
use crate::sim::overall_reward;

fn check(rewards: &[f64]) -> Result<()> {
    if rewards.is_empty() {
        return Err(Error::Empty("feedback sequence"));
    }
    if rewards.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::InvalidArgument("rewards must be finite and non-negative".into()));
    }
    Ok(())
}

fn dcg(rewards: &[f64]) -> f64 {
    rewards
        .iter()
        .enumerate()
        .map(|(i, r)| r / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG with the reward value as gain. A list without any reward scores 0.
pub fn ndcg(rewards: &[f64]) -> Result<f64> {
    check(rewards)?;
    let mut ideal = rewards.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg(rewards) / idcg)
}

/// Average precision with every positive reward counted as relevant.
pub fn average_precision(rewards: &[f64]) -> Result<f64> {
    check(rewards)?;
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, r) in rewards.iter().enumerate() {
        if *r > 0.0 {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(if hits == 0 { 0.0 } else { total / hits as f64 })
}

/// Expected per-list metrics when each slot's feedback is drawn
/// independently with probabilities `[skip, click, order]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChanceLevel {
    pub map: f64,
    pub ndcg: f64,
    pub overall: f64,
}

pub fn chance_level(marginals: [f64; 3], k: usize, rewards: &RewardMap, gamma_pos: f64) -> Result<ChanceLevel> {
    if k == 0 || k > 12 {
        return Err(Error::InvalidArgument(format!("list length {k} out of range for enumeration")));
    }
    let values = [rewards.skip, rewards.click, rewards.order];
    let mut out = ChanceLevel {
        map: 0.0,
        ndcg: 0.0,
        overall: 0.0,
    };
    let mut pattern = vec![0.0; k];
    for code in 0..3usize.pow(k as u32) {
        let mut c = code;
        let mut p = 1.0;
        for slot in pattern.iter_mut() {
            *slot = values[c % 3];
            p *= marginals[c % 3];
            c /= 3;
        }
        out.map += p * average_precision(&pattern)?;
        out.ndcg += p * ndcg(&pattern)?;
        out.overall += p * overall_reward(&pattern, gamma_pos);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg(&[5.0, 1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(ndcg(&[0.0; 4]).unwrap(), 0.0);
        let expected = 2f64.log2() / 3f64.log2();
        assert!((ndcg(&[0.0, 5.0]).unwrap() - expected).abs() < 1e-12);
        assert!(ndcg(&[]).is_err());
    }

    #[test]
    fn average_precision_examples() {
        assert_eq!(average_precision(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.0; 4]).unwrap(), 0.0);
        assert!((average_precision(&[0.0, 1.0, 0.0, 1.0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn chance_level_of_a_certain_outcome() {
        let r = RewardMap::default();
        let all_skip = chance_level([1.0, 0.0, 0.0], 3, &r, 0.9).unwrap();
        assert_eq!((all_skip.map, all_skip.ndcg, all_skip.overall), (0.0, 0.0, 0.0));
        let all_click = chance_level([0.0, 1.0, 0.0], 2, &r, 0.5).unwrap();
        assert_eq!(all_click.map, 1.0);
        assert_eq!(all_click.ndcg, 1.0);
        assert!((all_click.overall - 1.5).abs() < 1e-15);
    }

    #[test]
    fn chance_level_single_slot() {
        // one slot: AP and NDCG are both P(positive)
        let c = chance_level([0.7, 0.2, 0.1], 1, &RewardMap::default(), 0.9).unwrap();
        assert!((c.map - 0.3).abs() < 1e-12);
        assert!((c.ndcg - 0.3).abs() < 1e-12);
        assert!((c.overall - 0.7).abs() < 1e-12);
    }
}
