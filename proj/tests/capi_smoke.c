/* The public header must compile as plain C. */
#include <stdio.h>

#include "prom3e/prom3e.h"

int main(void) {
  double err = 1.0;
  char* report = NULL;
  prom3e_status s = prom3e_grad_check(4, 2, 3, 1, 1e-5, &err, &report);
  prom3e_string_free(report);
  if (s != PROM3E_OK) {
    fprintf(stderr, "%s: %s\n", prom3e_status_name(s), prom3e_last_error());
    return 1;
  }
  printf("max_relative_error %g\n", err);
  return err < 1e-4 ? 0 : 1;
}
