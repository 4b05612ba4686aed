use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::interactions::Interactions;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Disjoint member / non-member / attacker user partitions (user indices).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipSplit {
    pub member_users: Vec<usize>,
    pub nonmember_users: Vec<usize>,
    pub attacker_users: Vec<usize>,
    /// Users moved into the attacker partition to reach full item coverage.
    pub coverage_augmented: Vec<usize>,
    pub seed: u64,
}

impl MembershipSplit {
    pub fn is_disjoint(&self) -> bool {
        let mut all: Vec<usize> = self
            .member_users
            .iter()
            .chain(&self.nonmember_users)
            .chain(&self.attacker_users)
            .copied()
            .collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        all.len() == n
    }
}

/// Items never touched by any of `users`.
pub fn uncovered_items<T: Scalar>(interactions: &Interactions<T>, users: &[usize]) -> Vec<usize> {
    let mut covered = vec![false; interactions.num_items()];
    for &u in users {
        for &(i, _) in interactions.row(u) {
            covered[i] = true;
        }
    }
    covered
        .iter()
        .enumerate()
        .filter(|(_, &c)| !c)
        .map(|(i, _)| i)
        .collect()
}

/// Seeded three-way user split.
///
/// Users with empty histories are left out. The attacker partition takes
/// `round(attacker_frac * n)` users and is then grown greedily (most newly
/// covered items first) until every item is covered; members take
/// `round(member_frac * n)` of what is left and non-members the remainder.
pub fn split_membership<T: Scalar>(
    interactions: &Interactions<T>,
    member_frac: f64,
    attacker_frac: f64,
    seed: u64,
) -> Result<MembershipSplit> {
    if !(member_frac > 0.0 && attacker_frac > 0.0 && member_frac + attacker_frac <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fractions must be positive with sum <= 1 (member {member_frac}, attacker {attacker_frac})"
        )));
    }
    let mut users: Vec<usize> = (0..interactions.num_users())
        .filter(|&u| !interactions.row(u).is_empty())
        .collect();
    let n = users.len();
    let n_attacker = ((attacker_frac * n as f64).round() as usize).max(1);
    let n_member = ((member_frac * n as f64).round() as usize).max(1);
    if n_attacker + n_member >= n {
        return Err(Error::InvalidArgument(format!(
            "{n} users with history cannot fill three nonempty partitions"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    users.shuffle(&mut rng);
    let mut attacker: Vec<usize> = users[..n_attacker].to_vec();
    let mut pool: Vec<usize> = users[n_attacker..].to_vec();

    let mut uncovered = uncovered_items(interactions, &attacker);
    if !uncovered.is_empty() {
        let reachable = uncovered_items(interactions, &users);
        if !reachable.is_empty() {
            return Err(Error::Coverage(reachable));
        }
    }
    let mut augmented = Vec::new();
    while !uncovered.is_empty() {
        let mut need = vec![false; interactions.num_items()];
        for &i in &uncovered {
            need[i] = true;
        }
        let (best_pos, gain) = pool
            .iter()
            .enumerate()
            .map(|(pos, &u)| {
                let gain = interactions.row(u).iter().filter(|&&(i, _)| need[i]).count();
                (pos, gain)
            })
            // first maximum in shuffled order
            .fold((0, 0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if gain == 0 {
            return Err(Error::Coverage(uncovered));
        }
        let u = pool.remove(best_pos);
        attacker.push(u);
        augmented.push(u);
        uncovered.retain(|&i| !interactions.row(u).iter().any(|&(j, _)| j == i));
    }

    if pool.len() <= n_member {
        return Err(Error::InvalidArgument(format!(
            "coverage augmentation left {} users for {n_member} members and at least one non-member",
            pool.len()
        )));
    }
    let mut member = pool[..n_member].to_vec();
    let mut nonmember = pool[n_member..].to_vec();
    member.sort_unstable();
    nonmember.sort_unstable();
    attacker.sort_unstable();
    augmented.sort_unstable();
    Ok(MembershipSplit {
        member_users: member,
        nonmember_users: nonmember,
        attacker_users: attacker,
        coverage_augmented: augmented,
        seed,
    })
}
