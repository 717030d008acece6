use crate::classifier::ClassRbmParams;
use crate::error::{Error, Result};
use crate::rbm::RbmParams;
use crate::structure::ConnectivityStructure;

/// A trained or trainable model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Generative(RbmParams),
    Classifier(ClassRbmParams),
}

impl Model {
    pub fn base(&self) -> &RbmParams {
        match self {
            Model::Generative(p) => p,
            Model::Classifier(c) => &c.base,
        }
    }

    pub fn structure(&self) -> &ConnectivityStructure {
        self.base().structure()
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            Model::Generative(_) => None,
            Model::Classifier(c) => Some(c.n_classes()),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Model::Generative(p) => p.is_finite(),
            Model::Classifier(c) => c.is_finite(),
        }
    }

    pub fn as_generative(&self) -> Result<&RbmParams> {
        match self {
            Model::Generative(p) => Ok(p),
            Model::Classifier(_) => Err(Error::invalid("expected a generative model, got a classifier")),
        }
    }

    pub fn as_classifier(&self) -> Result<&ClassRbmParams> {
        match self {
            Model::Classifier(c) => Ok(c),
            Model::Generative(_) => Err(Error::invalid("expected a classifier, got a generative model")),
        }
    }

    /// Flat views of every parameter group, in a fixed order:
    /// `W, a, b` and, for classifiers, `U, c`.
    pub fn parts(&self) -> Vec<&[f64]> {
        match self {
            Model::Generative(p) => vec![p.weights(), p.visible_bias(), p.hidden_bias()],
            Model::Classifier(c) => vec![
                c.base.weights(),
                c.base.visible_bias(),
                c.base.hidden_bias(),
                c.class_weights(),
                c.class_bias(),
            ],
        }
    }

    pub fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Model::Generative(p) => {
                let (w, a, b) = p.split_mut();
                vec![w, a, b]
            }
            Model::Classifier(c) => {
                c.split_all_mut().into()
            }
        }
    }
}
