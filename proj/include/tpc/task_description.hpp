#pragma once

#include <optional>
#include <string>

#include "tpc/backends.hpp"

namespace tpc {

enum class DescriptionOrigin { Generated, UserSupplied };

struct TaskDescription {
  std::string text;
  DescriptionOrigin origin = DescriptionOrigin::Generated;
  std::optional<std::size_t> candidate_rank;
  std::optional<GenerationParams> gen_params;  // absent for user-supplied text

  static TaskDescription user_supplied(std::string question) {
    if (is_blank(question)) throw Error(ErrorCode::EmptyQuestion, "question is empty");
    TaskDescription td;
    td.text = std::move(question);
    td.origin = DescriptionOrigin::UserSupplied;
    return td;
  }
};

}  // namespace tpc
