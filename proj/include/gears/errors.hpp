#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gears {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input failed a documented precondition or invariant (CLI exit code 2).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class FrameOutOfRange : public ValidationError {
 public:
  FrameOutOfRange(std::size_t frame, std::size_t count)
      : ValidationError("frame " + std::to_string(frame) + " out of range [0, " +
                        std::to_string(count) + ")"),
        frame_(frame) {}
  std::size_t frame() const noexcept { return frame_; }

 private:
  std::size_t frame_;
};

class DegenerateBone : public Error {
 public:
  explicit DegenerateBone(int joint)
      : Error("bone ending at joint " + std::to_string(joint) + " is shorter than 1 mm"),
        joint_(joint) {}
  int joint() const noexcept { return joint_; }

 private:
  int joint_;
};

class VertexCountMismatch : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class EmptyMesh : public Error {
 public:
  EmptyMesh() : Error("cannot sample an empty mesh") {}
};

class EmptyDataset : public ValidationError {
 public:
  EmptyDataset() : ValidationError("dataset is empty") {}
};

class GraphCycle : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

class TooShort : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class GraspNotFound : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace gears
