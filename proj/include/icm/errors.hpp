#pragma once

#include <stdexcept>
#include <string>

namespace icm {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Kinematics / materials
struct NonPositiveJacobian : Error { using Error::Error; };
struct DomainViolation : Error { using Error::Error; };
struct UnknownSubsetRule : Error { using Error::Error; };
struct DegenerateBasis : Error { using Error::Error; };

// Discretization
struct MeshGenerationFailure : Error { using Error::Error; };
struct DegenerateElement : Error { using Error::Error; };
struct NodeNotInElement : Error { using Error::Error; };
struct UnknownBoundarySet : Error { using Error::Error; };

// Solver
struct NonConvergence : Error { using Error::Error; };
struct LineSearchFailure : Error { using Error::Error; };

// Tokenizer / network / training
struct ZeroRowNorm : Error { using Error::Error; };
struct InsufficientTokens : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct NonFiniteActivation : Error { using Error::Error; };
struct DegeneratePrediction : Error { using Error::Error; };
struct NonFinite : Error { using Error::Error; };

// Inference / ENN
struct ZeroTrueForce : Error { using Error::Error; };
struct ZeroAlpha : Error { using Error::Error; };
struct DegenerateRange : Error { using Error::Error; };
struct ZeroForceScale : Error { using Error::Error; };

// CLI
struct MissingArtifact : Error { using Error::Error; };

}  // namespace icm
