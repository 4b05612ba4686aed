//! Seeded generator for MovieLens-100K-format data.
//!
//! Produces `u.data`, `u.user` and `u.item` text in the original layouts so
//! the same loaders and configs work on the real files. Users pick items by
//! a utility mixing item popularity, a genre taste driven by gender, age and
//! occupation, and a latent taste independent of attributes.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OCCUPATIONS: [&str; 21] = [
    "administrator",
    "artist",
    "doctor",
    "educator",
    "engineer",
    "entertainment",
    "executive",
    "healthcare",
    "homemaker",
    "lawyer",
    "librarian",
    "marketing",
    "none",
    "other",
    "programmer",
    "retired",
    "salesman",
    "scientist",
    "student",
    "technician",
    "writer",
];

const OCCUPATION_WEIGHTS: [f64; 21] = [
    79.0, 28.0, 7.0, 95.0, 67.0, 18.0, 32.0, 16.0, 7.0, 12.0, 51.0, 26.0, 9.0, 105.0, 66.0, 14.0,
    12.0, 31.0, 196.0, 27.0, 45.0,
];

pub const GENRES: [&str; 19] = [
    "unknown",
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

const GENRE_WEIGHTS: [f64; 19] = [
    0.2, 251.0, 135.0, 42.0, 122.0, 505.0, 109.0, 50.0, 725.0, 22.0, 24.0, 92.0, 56.0, 61.0,
    247.0, 101.0, 251.0, 71.0, 27.0,
];

/// Age bands: (low, high, weight)
const AGE_BANDS: [(u32, u32, f64); 6] = [
    (7, 17, 0.05),
    (18, 24, 0.22),
    (25, 34, 0.35),
    (35, 44, 0.19),
    (45, 55, 0.13),
    (56, 73, 0.06),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub min_history: usize,
    pub max_history: usize,
    /// Median of the log-normal extra history length above `min_history`.
    pub history_median_extra: f64,
    pub latent_dim: usize,
    pub popularity_weight: f64,
    pub genre_weight: f64,
    pub latent_weight: f64,
    /// Spread of per-user genre taste not explained by attributes.
    pub taste_noise: f64,

    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 600,
            items: 1000,
            min_history: 20,
            max_history: 400,
            history_median_extra: 45.0,
            latent_dim: 8,
            popularity_weight: 1.0,
            genre_weight: 1.0,
            latent_weight: 1.0,
            taste_noise: 0.5,
            seed: 2024,
        }
    }
}

/// Generated files as text, in MovieLens-100K layouts.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFiles {
    pub ratings: String,
    pub users: String,
    pub items: String,
}

impl SyntheticFiles {
    /// Writes `u.data`, `u.user`, `u.item` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [("u.data", &self.ratings), ("u.user", &self.users), ("u.item", &self.items)] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn weighted_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (k, &w) in weights.iter().enumerate() {
        if x < w {
            return k;
        }
        x -= w;
    }
    weights.len() - 1
}

fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticFiles> {
    if cfg.users == 0 || cfg.items == 0 || cfg.latent_dim == 0 {
        return Err(Error::InvalidArgument("users, items and latent_dim must be positive".into()));
    }
    if cfg.min_history == 0 || cfg.min_history > cfg.max_history || cfg.max_history > cfg.items {
        return Err(Error::InvalidArgument(
            "need 1 <= min_history <= max_history <= items".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ng = GENRES.len();
    let k = cfg.latent_dim;
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    // attribute effects on genre taste
    let gender_effect: Vec<Vec<f64>> = (0..2).map(|_| (0..ng).map(|_| 0.6 * normal(&mut rng)).collect()).collect();
    let age_effect: Vec<Vec<f64>> = (0..AGE_BANDS.len())
        .map(|_| (0..ng).map(|_| 0.6 * normal(&mut rng)).collect())
        .collect();
    let occ_effect: Vec<Vec<f64>> = (0..OCCUPATIONS.len())
        .map(|_| (0..ng).map(|_| 0.5 * normal(&mut rng)).collect())
        .collect();

    // items
    let popularity = LogNormal::new(0.0, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut item_genres: Vec<Vec<usize>> = Vec::with_capacity(cfg.items);
    let mut item_logpop = Vec::with_capacity(cfg.items);
    let mut item_latent: Vec<Vec<f64>> = Vec::with_capacity(cfg.items);
    let mut items_text = String::new();
    for i in 0..cfg.items {
        let mut genres = vec![weighted_index(&mut rng, &GENRE_WEIGHTS)];
        for p in [0.5, 0.15] {
            if rng.random_bool(p) {
                let g = weighted_index(&mut rng, &GENRE_WEIGHTS);
                if !genres.contains(&g) {
                    genres.push(g);
                }
            }
        }
        let pop: f64 = popularity.sample(&mut rng);
        item_logpop.push(pop.ln());
        item_latent.push((0..k).map(|_| normal(&mut rng)).collect());
        let year = 1930 + rng.random_range(0..68);
        let flags: Vec<&str> = (0..ng).map(|g| if genres.contains(&g) { "1" } else { "0" }).collect();
        items_text.push_str(&format!(
            "{}|Movie {} ({year})|01-Jan-{year}||http://example.invalid/{}|{}\n",
            i + 1,
            i + 1,
            i + 1,
            flags.join("|")
        ));
        item_genres.push(genres);
    }

    // users
    let extra = LogNormal::new(cfg.history_median_extra.max(1e-9).ln(), 0.9)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let taste = Normal::new(0.0, cfg.taste_noise.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let band_weights: Vec<f64> = AGE_BANDS.iter().map(|b| b.2).collect();
    let mut users_text = String::new();
    let mut ratings_text = String::new();
    let latent_scale = 1.0 / (k as f64).sqrt();
    for u in 0..cfg.users {
        let gender = if rng.random_bool(0.71) { 0 } else { 1 };
        let band = weighted_index(&mut rng, &band_weights);
        let age = rng.random_range(AGE_BANDS[band].0..=AGE_BANDS[band].1);
        let occ = weighted_index(&mut rng, &OCCUPATION_WEIGHTS);
        let zip = rng.random_range(10000..99999);
        users_text.push_str(&format!(
            "{}|{age}|{}|{}|{zip}\n",
            u + 1,
            if gender == 0 { "M" } else { "F" },
            OCCUPATIONS[occ]
        ));

        let affinity: Vec<f64> = (0..ng)
            .map(|g| gender_effect[gender][g] + age_effect[band][g] + occ_effect[occ][g] + taste.sample(&mut rng))
            .collect();
        let latent: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
        let m = ((cfg.min_history as f64 + extra.sample(&mut rng)).round() as usize).min(cfg.max_history);

        let mut keyed: Vec<(f64, usize)> = (0..cfg.items)
            .map(|i| {
                let genre_pref = item_genres[i].iter().map(|&g| affinity[g]).sum::<f64>() / item_genres[i].len() as f64;
                let latent_pref: f64 = latent.iter().zip(&item_latent[i]).map(|(a, b)| a * b).sum::<f64>() * latent_scale;
                let utility = cfg.popularity_weight * item_logpop[i]
                    + cfg.genre_weight * genre_pref
                    + cfg.latent_weight * latent_pref;
                (utility + gumbel(&mut rng), i)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (rank, &(_, i)) in keyed.iter().take(m).enumerate() {
            let rating = 5 - (5 * rank / m.max(1)).min(4);
            let ts = 874_724_710 + u * 1000 + rank;
            ratings_text.push_str(&format!("{}\t{}\t{rating}\t{ts}\n", u + 1, i + 1));
        }
    }
    Ok(SyntheticFiles {
        ratings: ratings_text,
        users: users_text,
        items: items_text,
    })
}
