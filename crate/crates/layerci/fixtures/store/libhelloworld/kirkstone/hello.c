#include <stdio.h>
#include "hello.h"

void hello_print(void)
{
	printf("Hello World from libhelloworld\n");
}
