//! A class field bound to its class table, compiled for the hot loops of
//! trajectory sampling and exact evolution.

use crate::class::{require_valid, BranchTable, ClassTable, VertexClass};
use crate::error::{OqwError, Result};
use crate::lattice::{ClassField, Site, SiteClassifier};

#[derive(Debug, Clone)]
pub struct CompiledWalk {
    field: ClassField,
    /// Indexed like the field's labels.
    classes: Vec<VertexClass>,
    tables: Vec<BranchTable>,
    /// Distinct displacements over all classes, sorted.
    displacements: Vec<Site>,
    /// `by_displacement[class][i]`: branches of `class` moving by `displacements[i]`.
    by_displacement: Vec<Vec<Vec<usize>>>,
    max_step: i64,
    max_l1: i64,
}

impl CompiledWalk {
    /// Binds `field` to `table`. Every label of the field must be defined and
    /// every class must pass validation.
    pub fn new(field: ClassField, table: &ClassTable) -> Result<Self> {
        if field.dimension() != table.dimension() {
            return Err(OqwError::DimensionMismatch {
                expected: table.dimension(),
                found: field.dimension(),
                context: "field vs class table".into(),
            });
        }
        let classes = field
            .labels()
            .iter()
            .map(|l| table.get(l).cloned())
            .collect::<Result<Vec<_>>>()?;
        for class in &classes {
            require_valid(class)?;
        }
        let tables: Vec<BranchTable> = classes.iter().map(|c| c.branch_table()).collect();
        let mut displacements: Vec<Site> = tables
            .iter()
            .flat_map(|t| t.branches().iter().map(|b| b.displacement))
            .collect();
        displacements.sort_unstable();
        displacements.dedup();
        let by_displacement = tables
            .iter()
            .map(|t| {
                displacements
                    .iter()
                    .map(|d| {
                        t.branches()
                            .iter()
                            .enumerate()
                            .filter(|(_, b)| b.displacement == *d)
                            .map(|(i, _)| i)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let max_step = displacements
            .iter()
            .flat_map(|d| d.iter().map(|x| x.abs()))
            .max()
            .unwrap_or(0);
        let max_l1 = displacements
            .iter()
            .map(|d| d.iter().map(|x| x.abs()).sum())
            .max()
            .unwrap_or(0);
        Ok(Self {
            field,
            classes,
            tables,
            displacements,
            by_displacement,
            max_step,
            max_l1,
        })
    }

    /// A single class on every site.
    pub fn homogeneous(class: VertexClass) -> Result<Self> {
        let field = ClassField::homogeneous(class.dimension(), class.label())?;
        Self::new(field, &ClassTable::new([class])?)
    }

    pub fn field(&self) -> &ClassField {
        &self.field
    }

    pub fn dimension(&self) -> usize {
        self.field.dimension()
    }

    pub fn internal_dim(&self) -> usize {
        self.classes[0].internal_dim()
    }

    pub fn classes(&self) -> &[VertexClass] {
        &self.classes
    }

    pub fn class(&self, index: usize) -> &VertexClass {
        &self.classes[index]
    }

    pub fn table(&self, index: usize) -> &BranchTable {
        &self.tables[index]
    }

    #[inline]
    pub fn class_index_at(&self, site: &Site) -> usize {
        self.field.class_index_at(site)
    }

    pub fn displacements(&self) -> &[Site] {
        &self.displacements
    }

    /// Branches of class `class` whose displacement is `displacements()[d]`.
    #[inline]
    pub fn branches_with(&self, class: usize, d: usize) -> &[usize] {
        &self.by_displacement[class][d]
    }

    /// Largest coordinate of any displacement.
    pub fn max_step(&self) -> i64 {
        self.max_step
    }

    /// Largest L1 length of any displacement.
    pub fn max_l1(&self) -> i64 {
        self.max_l1
    }
}
