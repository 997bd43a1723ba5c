#pragma once

#include <stdexcept>
#include <string>

namespace cpscode {

enum class ErrorCode {
  // log ingestion
  MalformedLine,
  DuplicateRecordId,
  LabelIneligibleForKind,
  // dataset splitting
  EmptyInput,
  FractionsInvalid,
  FractionInvalid,
  // textprep / vocab
  EmptyCorpus,
  // neurocore
  NoMaskPosition,
  SequenceTooLong,
  NonFiniteLoss,
  ShapeMismatch,
  NonFiniteGradient,
  // promptcode
  MaskAlreadyPresent,
  UnknownLabelWord,
  EmptyTrainingSet,
  UnlabeledRecord,
  ConditionIncompatible,
  UntrainedCoder,
  // rulecoder
  GroupMismatch,
  // baselines
  LabelOutsideChatSet,
  DimensionMismatch,
  // evalkit
  LengthMismatch,
  EmptyMatrix,
  // synthcorpus
  InvalidDistribution,
  // checkpoints / config
  VocabHashMismatch,
  BadCheckpoint,
  BadConfig,
  IoError,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}

  ErrorCode code() const { return code_; }

  // Input/usage problems map to CLI exit code 1, everything else to 2.
  bool is_validation() const {
    switch (code_) {
      case ErrorCode::NonFiniteLoss:
      case ErrorCode::NonFiniteGradient:
      case ErrorCode::IoError:
        return false;
      default:
        return true;
    }
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, std::string message) {
  throw Error(code, std::move(message));
}

}  // namespace cpscode
