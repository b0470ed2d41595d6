//! Bucket hashing for federated deployments.

use super::RouterError;

/// Maps a principal onto a bucket in `[1, node_count]`.
///
/// Implementations must be pure: the same inputs always yield the same bucket.
pub trait BucketHash: Send + Sync + std::fmt::Debug {
    fn bucket(&self, username: &[u8], node_count: usize) -> Result<usize, RouterError>;
}

/// Modular hash over the first character of the username.
///
/// The lowercased first byte is mapped to `k` with `a = 1 … z = 26` and the
/// bucket is `(k mod node_count) + 1`. Bytes outside `a..=z` use the
/// Euclidean remainder of `byte - 96`, which keeps the result in range.
/// The mapping is neither uniform nor consistent across topology changes.
#[derive(Debug, Default, Clone, Copy)]
pub struct FirstCharHash;

impl BucketHash for FirstCharHash {
    fn bucket(&self, username: &[u8], node_count: usize) -> Result<usize, RouterError> {
        compute_bucket(username, node_count)
    }
}

pub fn compute_bucket(username: &[u8], node_count: usize) -> Result<usize, RouterError> {
    let first = *username
        .first()
        .ok_or_else(|| RouterError::InvalidArgument("username must not be empty".into()))?;
    if node_count == 0 {
        return Err(RouterError::InvalidArgument(
            "node_count must be at least 1".into(),
        ));
    }
    let k = i64::from(first.to_ascii_lowercase()) - 96;
    let bucket = k.rem_euclid(node_count as i64) as usize + 1;
    Ok(bucket)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent table: letter index (a=1..z=26) reduced by hand.
    fn letter_bucket(letter_index: usize, node_count: usize) -> usize {
        let mut r = letter_index;
        while r >= node_count {
            r -= node_count;
        }
        r + 1
    }

    #[test]
    fn single_node_always_bucket_one() {
        assert_eq!(compute_bucket(b"alice", 1).unwrap(), 1);
    }

    #[test]
    fn alice_on_two_nodes() {
        assert_eq!(compute_bucket(b"alice", 2).unwrap(), 2);
    }

    #[test]
    fn zulu_on_four_nodes() {
        // 'z' -> 26, 26 mod 4 = 2, bucket 3
        assert_eq!(letter_bucket(26, 4), 3);
        assert_eq!(compute_bucket(b"zulu", 4).unwrap(), 3);
    }

    #[test]
    fn empty_username_rejected() {
        assert!(matches!(
            compute_bucket(b"", 3),
            Err(RouterError::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_nodes_rejected() {
        assert!(compute_bucket(b"a", 0).is_err());
    }

    #[test]
    fn matches_enumeration_for_all_letters() {
        for n in 1..=16 {
            for (i, c) in (b'a'..=b'z').enumerate() {
                let expected = letter_bucket(i + 1, n);
                assert_eq!(compute_bucket(&[c], n).unwrap(), expected, "{} n={n}", c as char);
            }
        }
    }

    #[test]
    fn non_letters_stay_in_range() {
        for b in 0u8..=255 {
            for n in 1..=16 {
                let bucket = compute_bucket(&[b, b'x'], n).unwrap();
                assert!((1..=n).contains(&bucket));
            }
        }
        // '0' is 48: (48 - 96) rem_euclid 5 = 2
        assert_eq!(compute_bucket(b"0abc", 5).unwrap(), 3);
    }

    proptest! {
        #[test]
        fn case_insensitive(first in proptest::char::range('a', 'z'), rest in "[a-z0-9]{0,12}", n in 1usize..32) {
            let lower = format!("{first}{rest}");
            let upper = format!("{}{rest}", first.to_ascii_uppercase());
            prop_assert_eq!(
                compute_bucket(lower.as_bytes(), n).unwrap(),
                compute_bucket(upper.as_bytes(), n).unwrap()
            );
        }

        #[test]
        fn depends_only_on_first_byte(name in proptest::collection::vec(any::<u8>(), 1..16), other in proptest::collection::vec(any::<u8>(), 0..16), n in 1usize..64) {
            let mut with_other = vec![name[0]];
            with_other.extend(other);
            let bucket = compute_bucket(&name, n).unwrap();
            prop_assert_eq!(bucket, compute_bucket(&with_other, n).unwrap());
            prop_assert!((1..=n).contains(&bucket));
        }
    }
}
