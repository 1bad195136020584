use core::fmt;
use core::str::FromStr;

use crate::error::Error;

pub const NUM_CATEGORIES: usize = 6;

/// Hydrometeor category. All categories share one mass grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Liquid,
    Ice1,
    Ice2,
    Ice3,
    Snow,
    Graupel,
}

impl Category {
    pub const ALL: [Category; NUM_CATEGORIES] = [
        Category::Liquid,
        Category::Ice1,
        Category::Ice2,
        Category::Ice3,
        Category::Snow,
        Category::Graupel,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Liquid => "liquid",
            Category::Ice1 => "ice1",
            Category::Ice2 => "ice2",
            Category::Ice3 => "ice3",
            Category::Snow => "snow",
            Category::Graupel => "graupel",
        }
    }

    pub fn is_frozen(self) -> bool {
        self != Category::Liquid
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown category {s:?}")))
    }
}
