#include "hello.h"

int main(void)
{
	hello_print();
	return 0;
}
