use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent child seed for a named stream and index, stable across runs and platforms.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(base ^ h).wrapping_add(index))
}

pub fn fill_gaussian<T: Scalar>(rng: &mut Rng, out: &mut [T]) {
    for v in out {
        let z: f64 = StandardNormal.sample(rng);
        *v = T::lit(z);
    }
}

/// I.i.d. standard normal tensor, deterministic per seed.
pub fn sample_gaussian<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    fill_gaussian(&mut seeded_rng(seed), t.data_mut());
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_tag_and_index() {
        let a = derive_seed(7, "train", 0);
        assert_ne!(a, derive_seed(7, "train", 1));
        assert_ne!(a, derive_seed(7, "val", 0));
        assert_ne!(a, derive_seed(8, "train", 0));
        assert_eq!(a, derive_seed(7, "train", 0));
    }

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f32> = sample_gaussian(&[3, 5], 11);
        let b: Tensor<f32> = sample_gaussian(&[3, 5], 11);
        assert_eq!(a, b);
        let c: Tensor<f32> = sample_gaussian(&[3, 5], 12);
        assert_ne!(a, c);
    }
}
