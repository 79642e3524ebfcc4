#include <stdio.h>
#include "ypose.h"
int main(void) {
  YposeModel *m = NULL;
  if (ypose_model_build("ypose-lite", 0, &m) != YPOSE_STATUS_OK) return 1;
  uint64_t p = 0, macs = 0;
  ypose_model_param_count(m, &p, NULL);
  ypose_model_mac_count(m, 224, &macs);
  printf("v%s params %llu macs %llu\n", ypose_version(), (unsigned long long)p, (unsigned long long)macs);
  YposeStatus s = ypose_model_build("nope", 0, &m);
  printf("status %d: %s\n", (int)s, ypose_last_error());
  return 0;
}
